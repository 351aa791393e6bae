// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/tasks.hpp"

#include "adaptlab/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace adaptlab {

// ---------------------------------------------------------------------------
// Sequence conventions

std::vector<int> code_input_ids(const Vocabulary& vocab, const CorpusExample& ex, bool language_tag,
                                std::size_t max_len) {
  std::vector<int> ids{Vocabulary::kBos};
  if (language_tag) ids.push_back(vocab.tag_id(ex.language));
  const std::size_t room = max_len > ids.size() + 1 ? max_len - ids.size() - 1 : 0;
  if (room == 0) throw Error("code_input_ids: max_len too small");
  auto body = vocab.encode(ex.code);
  if (body.size() > room) body.resize(room);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> query_input_ids(const Vocabulary& vocab, const CorpusExample& ex, std::size_t max_len) {
  if (max_len < 3) throw Error("query_input_ids: max_len too small");
  std::vector<int> ids{Vocabulary::kBos};
  auto body = vocab.encode(ex.description);
  if (body.size() > max_len - 2) body.resize(max_len - 2);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> summary_target_ids(const Vocabulary& vocab, const CorpusExample& ex, std::size_t max_len) {
  if (max_len < 2) throw Error("summary_target_ids: max_len too small");
  auto ids = vocab.encode(ex.description);
  if (ids.size() > max_len - 1) ids.resize(max_len - 1);
  return ids;
}

// ---------------------------------------------------------------------------
// Summarization

SummarizationBatch SummarizationBatch::build(const std::vector<std::vector<int>>& sources,
                                             const std::vector<std::vector<int>>& summaries) {
  if (sources.size() != summaries.size() || sources.empty()) {
    throw Error("SummarizationBatch: need equally many (>= 1) sources and summaries");
  }
  SummarizationBatch b;
  b.encoder = TokenBatch::from_sequences(sources, Vocabulary::kPad);
  std::vector<std::vector<int>> dec;
  for (const auto& s : summaries) {
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), s.begin(), s.end());
    dec.push_back(std::move(in));
  }
  b.decoder_input = TokenBatch::from_sequences(dec, Vocabulary::kPad);
  const std::size_t t = b.decoder_input.seq_len;
  b.targets.assign(summaries.size() * t, -1);
  for (std::size_t r = 0; r < summaries.size(); ++r) {
    for (std::size_t i = 0; i < summaries[r].size(); ++i) b.targets[r * t + i] = summaries[r][i];
    b.targets[r * t + summaries[r].size()] = Vocabulary::kEos;
  }
  return b;
}

ad::Tensor summarization_loss(TransformerModel& model, const SummarizationBatch& batch) {
  if (model.mode() != ModelMode::kEncoderDecoder) throw Error("summarization_loss: model has no decoder");
  auto enc = model.encode(batch.encoder);
  auto logits = model.decode(enc, batch.decoder_input);
  return ad::cross_entropy(logits, batch.targets, -1);
}

namespace {

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

std::vector<double> next_log_probs(TransformerModel& model, const EncoderOutput& enc, const std::vector<int>& tokens) {
  std::vector<int> prefix{Vocabulary::kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return log_softmax(decode_step(model, enc, prefix));
}

Hypothesis greedy(TransformerModel& model, const EncoderOutput& enc, std::size_t max_len) {
  Hypothesis h;
  while (h.tokens.size() < max_len) {
    const auto lp = next_log_probs(model, enc, h.tokens);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

}  // namespace

Hypothesis generate_hypothesis(TransformerModel& model, const std::vector<int>& source, std::size_t max_len,
                               DecodeStrategy strategy) {
  if (max_len < 1) throw Error("generate_summary: max_len must be >= 1");
  if (strategy.beam_size < 1) throw Error("generate_summary: beam size must be >= 1");
  ad::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  const auto enc = encode(model, source, false);
  Hypothesis best = greedy(model, enc, max_len);
  if (strategy.beam_size > 1) {
    std::vector<Hypothesis> candidates{best};
    std::vector<Hypothesis> alive{Hypothesis{}};
    for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
      std::vector<Hypothesis> expanded;
      for (const auto& h : alive) {
        const auto lp = next_log_probs(model, enc, h.tokens);
        std::vector<int> order(lp.size());
        std::iota(order.begin(), order.end(), 0);
        const std::size_t k = std::min(strategy.beam_size, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](int a, int b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
        for (std::size_t j = 0; j < k; ++j) {
          Hypothesis next = h;
          next.tokens.push_back(order[j]);
          next.log_prob += lp[static_cast<std::size_t>(order[j])];
          next.finished = order[j] == Vocabulary::kEos;
          expanded.push_back(std::move(next));
        }
      }
      // Stable: equal scores keep the earlier (lower beam, lower token) entry.
      std::stable_sort(expanded.begin(), expanded.end(),
                       [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
      alive.clear();
      for (auto& h : expanded) {
        if (alive.size() == strategy.beam_size) break;
        if (h.finished || h.tokens.size() == max_len) {
          candidates.push_back(h);
          if (h.finished) continue;
        }
        alive.push_back(std::move(h));
      }
      if (step + 1 == max_len) break;
    }
    for (const auto& c : candidates) {
      if (c.normalized_score() > best.normalized_score()) best = c;
    }
  }
  model.set_training(was_training);
  return best;
}

std::vector<int> generate_summary(TransformerModel& model, const std::vector<int>& source, std::size_t max_len,
                                  DecodeStrategy strategy) {
  return generate_hypothesis(model, source, max_len, strategy).tokens;
}

// ---------------------------------------------------------------------------
// Search

ad::Tensor embed_sequences(TransformerModel& model, const TokenBatch& batch, SearchPooling pooling, bool normalize) {
  auto enc = model.encode(batch);
  ad::Tensor pooled;
  if (pooling == SearchPooling::kMean) {
    pooled = ad::masked_mean_pool(enc.states, batch.seq_len, batch.lengths);
  } else {
    const std::vector<std::size_t> first(batch.batch, 1);
    pooled = ad::masked_mean_pool(enc.states, batch.seq_len, first);
  }
  return normalize ? ad::l2_normalize_rows(pooled) : pooled;
}

ad::Tensor contrastive_loss(const ad::Tensor& queries, const ad::Tensor& codes, double temperature) {
  if (queries.rank() != 2 || queries.shape() != codes.shape()) {
    throw Error("contrastive_loss: query and code embeddings must be equal-shape [B, d]");
  }
  const std::size_t b = queries.dim(0);
  if (b < 2) throw Error("search_loss: batch of " + std::to_string(b) + " has no in-batch negatives");
  if (!(temperature > 0.0)) throw Error("search_loss: temperature must be positive");
  auto sim = ad::scale(ad::matmul(queries, ad::transpose(codes)), 1.0 / temperature);
  std::vector<int> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  auto q2c = ad::cross_entropy(sim, diag);
  auto c2q = ad::cross_entropy(ad::transpose(sim), diag);
  return ad::scale(ad::add(q2c, c2q), 0.5);
}

SearchBatch SearchBatch::build(const std::vector<std::vector<int>>& queries, const std::vector<std::vector<int>>& codes) {
  if (queries.size() != codes.size()) throw Error("SearchBatch: query and code counts differ");
  return {TokenBatch::from_sequences(queries, Vocabulary::kPad), TokenBatch::from_sequences(codes, Vocabulary::kPad)};
}

ad::Tensor search_loss(TransformerModel& model, const SearchBatch& batch, double temperature, SearchPooling pooling) {
  if (batch.queries.batch < 2) throw Error("search_loss: batch of 1 has no in-batch negatives");
  auto q = embed_sequences(model, batch.queries, pooling, true);
  auto c = embed_sequences(model, batch.codes, pooling, true);
  return contrastive_loss(q, c, temperature);
}

RetrievalIndex build_index(TransformerModel& model, const std::vector<std::vector<int>>& codes,
                           const std::vector<std::int64_t>& ids, SearchPooling pooling, bool normalize,
                           std::size_t batch_size) {
  if (codes.size() != ids.size()) throw Error("build_index: code and id counts differ");
  if (codes.empty()) throw Error("build_index: empty candidate set");
  ad::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  const std::size_t d = model.config().d_model;
  std::vector<double> data;
  data.reserve(codes.size() * d);
  for (std::size_t start = 0; start < codes.size(); start += batch_size) {
    const std::size_t end = std::min(codes.size(), start + batch_size);
    std::vector<std::vector<int>> chunk(codes.begin() + static_cast<std::ptrdiff_t>(start),
                                        codes.begin() + static_cast<std::ptrdiff_t>(end));
    auto e = embed_sequences(model, TokenBatch::from_sequences(chunk, Vocabulary::kPad), pooling, normalize);
    data.insert(data.end(), e.data().begin(), e.data().end());
  }
  model.set_training(was_training);
  return {ad::Tensor::from_data({codes.size(), d}, std::move(data)), ids, normalize};
}

std::vector<std::int64_t> rank_candidates(const double* query, const RetrievalIndex& index) {
  if (index.size() == 0) throw Error("retrieve: empty index");
  const std::size_t d = index.embeddings.dim(1);
  const double* e = index.embeddings.data().data();
  double qn = 0.0;
  for (std::size_t j = 0; j < d; ++j) qn += query[j] * query[j];
  qn = std::sqrt(qn);
  std::vector<std::pair<double, std::int64_t>> scored(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    double dot = 0.0, cn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += query[j] * e[i * d + j];
      cn += e[i * d + j] * e[i * d + j];
    }
    const double denom = index.normalized ? std::max(qn, 1e-12) : std::max(qn * std::sqrt(cn), 1e-12);
    scored[i] = {dot / denom, index.ids[i]};
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::int64_t> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

std::vector<std::int64_t> retrieve(TransformerModel& model, const std::vector<int>& query, const RetrievalIndex& index,
                                   SearchPooling pooling) {
  ad::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  auto q = embed_sequences(model, TokenBatch::from_sequences({query}, Vocabulary::kPad), pooling, true);
  model.set_training(was_training);
  return rank_candidates(q.data().data(), index);
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "retrieval_index"}, {"normalized", normalized ? "1" : "0"}};
  ckpt.tensors = {{"embeddings", embeddings}};
  write_checkpoint(path, ckpt);
  std::ofstream out(path.string() + ".ids");
  if (!out) throw Error("cannot write " + path.string() + ".ids");
  for (auto id : ids) out << id << '\n';
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  auto ckpt = read_checkpoint(path);
  if (!ckpt.has_meta("kind") || ckpt.meta_value("kind") != "retrieval_index") {
    throw Error(path.string() + " is not a retrieval index");
  }
  RetrievalIndex index;
  index.normalized = ckpt.meta_value("normalized") == "1";
  index.embeddings = ckpt.tensors.at(0).second;
  std::ifstream in(path.string() + ".ids");
  if (!in) throw Error("retrieval index id list not found: " + path.string() + ".ids");
  std::int64_t id;
  while (in >> id) index.ids.push_back(id);
  if (index.ids.size() != index.embeddings.dim(0)) throw Error("retrieval index: id list and embeddings disagree");
  return index;
}

}  // namespace adaptlab
