// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/training.hpp"

#include "adaptlab/adam.hpp"
#include "adaptlab/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace adaptlab {

using nlohmann::json;

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json kv_json(const KeyValues& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

std::vector<int> with_bos_eos(const std::vector<std::string>& tokens, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<int> ids{Vocabulary::kBos};
  auto body = vocab.encode(tokens);
  if (body.size() + 2 > max_len) body.resize(max_len - 2);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// MLM

json PretrainConfig::to_json() const {
  return {{"steps", steps},         {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"mask_rate", mask_rate}, {"seed", seed},             {"max_len", max_len}};
}

MaskedSequence mask_tokens(const std::vector<int>& ids, const Vocabulary& vocab, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("mask_tokens: rate must lie in [0, 1]");
  MaskedSequence m{ids, std::vector<int>(ids.size(), -1)};
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab.is_special(ids[i])) maskable.push_back(i);
  }
  std::size_t n = static_cast<std::size_t>(std::llround(rate * static_cast<double>(maskable.size())));
  if (rate > 0.0 && n == 0 && !maskable.empty()) n = 1;
  std::shuffle(maskable.begin(), maskable.end(), rng);
  const int first_plain = Vocabulary::kNumSpecials + (vocab.has_tags() ? static_cast<int>(vocab.languages().size()) : 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> random_token(first_plain, static_cast<int>(vocab.size()) - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t pos = maskable[k];
    m.targets[pos] = ids[pos];
    const double r = unit(rng);
    if (r < 0.8) {
      m.input[pos] = Vocabulary::kMask;
    } else if (r < 0.9) {
      m.input[pos] = random_token(rng);
    }
  }
  return m;
}

ad::Tensor mlm_loss(TransformerModel& model, const std::vector<MaskedSequence>& batch,
                    const std::vector<std::vector<int>>& originals) {
  if (batch.empty() || batch.size() != originals.size()) throw Error("mlm_loss: batch and originals differ");
  std::vector<std::vector<int>> inputs;
  for (const auto& m : batch) inputs.push_back(m.input);
  const auto tb = TokenBatch::from_sequences(inputs, Vocabulary::kPad);
  std::vector<int> targets(tb.batch * tb.seq_len, -1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::copy(batch[b].targets.begin(), batch[b].targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(b * tb.seq_len));
  }
  auto enc = model.encode(tb);
  auto loss = ad::cross_entropy(model.lm_logits(enc.states), targets, -1);
  if (model.mode() == ModelMode::kEncoderOnly) return loss;
  // Decoder position t reads the original prefix and predicts original[t+1];
  // only masked positions are supervised.
  std::vector<std::vector<int>> dec_in;
  for (const auto& o : originals) dec_in.emplace_back(o.begin(), o.end() - 1);
  const auto db = TokenBatch::from_sequences(dec_in, Vocabulary::kPad);
  std::vector<int> dec_targets(db.batch * db.seq_len, -1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t + 1 < originals[b].size(); ++t) dec_targets[b * db.seq_len + t] = batch[b].targets[t + 1];
  }
  auto dec_loss = ad::cross_entropy(model.decode(enc, db), dec_targets, -1);
  return ad::scale(ad::add(loss, dec_loss), 0.5);
}

PretrainResult pretrain_mlm(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& corpus,
                            const PretrainConfig& config) {
  if (config.steps < 1) throw Error("pretrain_mlm: steps must be >= 1");
  if (config.batch_size < 1) throw Error("pretrain_mlm: batch_size must be >= 1");
  if (languages_of(corpus).size() < 2) throw Error("pretrain_mlm: corpus must span at least 2 languages");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t max_len = std::min(config.max_len, model.config().max_seq_len);
  std::vector<std::vector<int>> seqs;
  for (const auto& ex : corpus) {
    seqs.push_back(with_bos_eos(ex.code, vocab, max_len));
    seqs.push_back(with_bos_eos(ex.description, vocab, max_len));
  }
  std::mt19937_64 rng(derive_seed(config.seed, 11));
  model.seed_dropout(derive_seed(config.seed, 12));
  model.set_training(true);
  ad::AdamState opt({config.learning_rate});
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  PretrainResult result;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<MaskedSequence> batch;
    std::vector<std::vector<int>> originals;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& s = seqs[order[cursor++]];
      batch.push_back(mask_tokens(s, vocab, config.mask_rate, rng));
      originals.push_back(s);
    }
    ad::zero_grad(model.parameters());
    auto loss = mlm_loss(model, batch, originals);
    loss.backward();
    opt.step(model.parameters());
    result.losses.push_back(loss.item());
  }
  model.set_training(false);
  result.seconds = seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// Enums and records

std::string to_string(Tuning t) {
  switch (t) {
    case Tuning::kFull: return "full";
    case Tuning::kAdapter: return "adapter";
    case Tuning::kAdapterMoe: return "adapter_moe";
  }
  return "?";
}

std::string to_string(Batching b) { return b == Batching::kMultilingual ? "multilingual" : "monolingual"; }
std::string to_string(TaskKind t) { return t == TaskKind::kSummarization ? "summarization" : "search"; }

Tuning tuning_from_string(const std::string& s) {
  if (s == "full") return Tuning::kFull;
  if (s == "adapter") return Tuning::kAdapter;
  if (s == "adapter_moe") return Tuning::kAdapterMoe;
  throw Error("unknown tuning '" + s + "' (expected full, adapter or adapter_moe)");
}

Batching batching_from_string(const std::string& s) {
  if (s == "multilingual") return Batching::kMultilingual;
  if (s == "monolingual") return Batching::kMonolingual;
  throw Error("unknown batching '" + s + "' (expected multilingual or monolingual)");
}

TaskKind task_from_string(const std::string& s) {
  if (s == "summarization") return TaskKind::kSummarization;
  if (s == "search") return TaskKind::kSearch;
  throw Error("unknown task '" + s + "' (expected summarization or search)");
}

DataScope DataScope::monolingual(const std::string& language) {
  return {Kind::kMonolingual, {language}, {language}};
}

DataScope DataScope::multilingual(const std::vector<std::string>& languages) {
  return {Kind::kMultilingual, languages, languages};
}

DataScope DataScope::cross(const std::string& train_language, const std::string& eval_language) {
  return {Kind::kCross, {train_language}, {eval_language}};
}

json Regime::to_json() const {
  const char* kind = scope.kind == DataScope::Kind::kMonolingual
                         ? "monolingual"
                         : (scope.kind == DataScope::Kind::kMultilingual ? "multilingual" : "cross");
  json j = {{"tuning", to_string(tuning)},
            {"scope", {{"kind", kind}, {"train", scope.train_languages}, {"eval", scope.eval_languages}}},
            {"batching", to_string(batching)},
            {"language_tags", language_tags},
            {"seed", seed}};
  j["samples_per_language"] = samples_per_language ? json(*samples_per_language) : json(nullptr);
  return j;
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_full", lr_full},
          {"lr_adapter", lr_adapter},
          {"patience", patience},
          {"max_source_len", max_source_len},
          {"max_summary_len", max_summary_len},
          {"temperature", temperature},
          {"pooling", pooling == SearchPooling::kMean ? "mean" : "first"},
          {"beam_size", beam_size},
          {"eval_limit", eval_limit},
          {"adapter", kv_json(adapter.to_kv())}};
}

double RunRecord::overall() const {
  if (bleu) return bleu->overall;
  if (mrr) return mrr->overall;
  throw Error("run record has no metrics");
}

json RunRecord::to_json() const {
  json j;
  j["regime"] = regime.to_json();
  j["task"] = to_string(task);
  j["config_hash"] = config_hash;
  j["base_hash_before"] = base_hash;
  j["base_hash_after"] = base_hash_after;
  j["parameters"] = {{"base", parameters.base_params},
                     {"adapter", parameters.adapter_params},
                     {"trainable", parameters.trainable_params}};
  j["train_loss"] = train_loss;
  j["dev_loss"] = dev_loss;
  j["best_epoch"] = best_epoch;
  json metrics;
  if (bleu) {
    metrics["metric"] = "smoothed_bleu4";
    metrics["smoothing"] = bleu->smoothing;
    metrics["overall"] = bleu->overall;
    metrics["per_language"] = bleu->per_language;
  } else if (mrr) {
    metrics["metric"] = "mrr";
    metrics["overall"] = mrr->overall;
    metrics["per_language"] = mrr->per_language;
  }
  j["metrics"] = metrics;
  j["wall_seconds"] = seconds;
  j["checkpoints"] = checkpoints;
  return j;
}

// ---------------------------------------------------------------------------
// Data plumbing

std::vector<std::vector<std::size_t>> make_batches(const std::vector<CorpusExample>& examples, std::size_t batch_size,
                                                   Batching batching, std::mt19937_64& rng) {
  if (batch_size < 1) throw Error("make_batches: batch_size must be >= 1");
  std::vector<std::vector<std::size_t>> batches;
  auto cut = [&](const std::vector<std::size_t>& order) {
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
  };
  if (batching == Batching::kMultilingual) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    cut(order);
  } else {
    for (const auto& lang : languages_of(examples)) {
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].language == lang) order.push_back(i);
      }
      std::shuffle(order.begin(), order.end(), rng);
      cut(order);
    }
    std::shuffle(batches.begin(), batches.end(), rng);
  }
  return batches;
}

namespace {

std::vector<CorpusExample> limited(const std::vector<CorpusExample>& v, std::size_t limit) {
  if (limit == 0 || v.size() <= limit) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

const Split& split_of(const std::map<std::string, Split>& splits, const std::string& lang) {
  auto it = splits.find(lang);
  if (it == splits.end()) throw Error("no data for language '" + lang + "'");
  return it->second;
}

}  // namespace

TaskData select_data(const std::map<std::string, Split>& splits, const Regime& regime, std::size_t eval_limit) {
  if (regime.scope.train_languages.empty()) throw Error("empty training scope");
  TaskData d;
  for (const auto& lang : regime.scope.train_languages) {
    const auto& s = split_of(splits, lang);
    auto train = s.train;
    if (regime.samples_per_language) train = low_resource_sample(train, *regime.samples_per_language, regime.seed);
    d.train.insert(d.train.end(), train.begin(), train.end());
    auto dev = limited(s.dev, eval_limit);
    d.dev.insert(d.dev.end(), dev.begin(), dev.end());
  }
  for (const auto& lang : regime.scope.eval_languages) {
    auto test = limited(split_of(splits, lang).test, eval_limit);
    d.test.insert(d.test.end(), test.begin(), test.end());
  }
  if (d.train.empty()) throw Error("empty training scope");
  std::set<std::int64_t> train_ids;
  for (const auto& ex : d.train) train_ids.insert(ex.id);
  for (const auto& ex : d.test) {
    if (train_ids.count(ex.id)) throw Error("example " + std::to_string(ex.id) + " is in both train and test");
  }
  return d;
}

ad::Tensor task_loss(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& examples,
                     const std::vector<std::size_t>& rows, TaskKind task, bool language_tags,
                     const TrainConfig& config) {
  const std::size_t max_src = std::min(config.max_source_len, model.config().max_seq_len);
  if (task == TaskKind::kSummarization) {
    std::vector<std::vector<int>> src, tgt;
    for (auto r : rows) {
      src.push_back(code_input_ids(vocab, examples[r], language_tags, max_src));
      tgt.push_back(summary_target_ids(vocab, examples[r], std::min(config.max_summary_len, model.config().max_seq_len)));
    }
    return summarization_loss(model, SummarizationBatch::build(src, tgt));
  }
  std::vector<std::vector<int>> queries, codes;
  for (auto r : rows) {
    queries.push_back(query_input_ids(vocab, examples[r], max_src));
    codes.push_back(code_input_ids(vocab, examples[r], language_tags, max_src));
  }
  return search_loss(model, SearchBatch::build(queries, codes), config.temperature, config.pooling);
}

namespace {

bool is_adapter(Tuning t) { return t != Tuning::kFull; }

// The search task never touches the decoder or the LM head; their tensors
// would receive no gradient.
ad::NamedTensors relevant(const ad::NamedTensors& params, TaskKind task) {
  if (task == TaskKind::kSummarization) return params;
  ad::NamedTensors out;
  for (const auto& [name, t] : params) {
    if (name.rfind("decoder.", 0) == 0 || name.rfind("lm.", 0) == 0 || name.find(".decoder.") != std::string::npos) {
      continue;
    }
    out.emplace_back(name, t);
  }
  return out;
}

double mean_loss(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& examples,
                 TaskKind task, bool tags, const TrainConfig& config) {
  ad::NoGradGuard no_grad;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t start = 0; start < examples.size(); start += config.batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(examples.size(), start + config.batch_size); ++i) rows.push_back(i);
    if (task == TaskKind::kSearch && rows.size() < 2) continue;
    sum += task_loss(model, vocab, examples, rows, task, tags, config).item() * static_cast<double>(rows.size());
    n += rows.size();
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void train_task(TransformerModel& model, const ad::NamedTensors& trainable, const Vocabulary& vocab,
                const TaskData& data, const Regime& regime, TaskKind task, const TrainConfig& config,
                RunRecord& record) {
  if (is_adapter(regime.tuning) && model.hook() == nullptr) {
    throw Error("adapter regime requires an injected adapter bank before training");
  }
  if (data.train.empty()) throw Error("empty training scope");
  if (task == TaskKind::kSummarization && model.mode() != ModelMode::kEncoderDecoder) {
    throw Error("summarization needs an encoder-decoder model");
  }
  ad::AdamState opt({is_adapter(regime.tuning) ? config.lr_adapter : config.lr_full});
  std::mt19937_64 rng(derive_seed(regime.seed, 21));
  model.seed_dropout(derive_seed(regime.seed, 22));

  std::vector<std::vector<double>> best;
  double best_dev = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t step = 0;
  const bool budget = config.steps > 0;
  for (std::size_t epoch = 0; budget ? step < config.steps : epoch < config.epochs; ++epoch) {
    model.set_training(true);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& rows : make_batches(data.train, config.batch_size, regime.batching, rng)) {
      if (task == TaskKind::kSearch && rows.size() < 2) continue;
      if (budget && step == config.steps) break;
      ++step;
      ad::zero_grad(trainable);
      auto loss = task_loss(model, vocab, data.train, rows, task, regime.language_tags, config);
      loss.backward();
      opt.step(trainable);
      sum += loss.item() * static_cast<double>(rows.size());
      n += rows.size();
    }
    if (n == 0) throw Error("no trainable batch (search needs at least 2 examples per batch)");
    record.train_loss.push_back(sum / static_cast<double>(n));
    model.set_training(false);
    if (data.dev.empty()) continue;
    const double dev = mean_loss(model, vocab, data.dev, task, regime.language_tags, config);
    record.dev_loss.push_back(dev);
    if (dev < best_dev) {
      best_dev = dev;
      record.best_epoch = epoch;
      stale = 0;
      best.clear();
      for (const auto& [name, t] : trainable) best.emplace_back(t.data().begin(), t.data().end());
    } else if (config.patience > 0 && ++stale >= config.patience) {
      break;
    }
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      auto t = trainable[i].second;
      auto dst = t.mutable_data();
      std::copy(best[i].begin(), best[i].end(), dst.begin());
    }
  } else {
    record.best_epoch = record.train_loss.empty() ? 0 : record.train_loss.size() - 1;
  }
  model.set_training(false);
}

BleuReport evaluate_summarization(TransformerModel& model, const Vocabulary& vocab,
                                  const std::vector<CorpusExample>& examples, bool language_tags,
                                  const TrainConfig& config) {
  std::vector<std::vector<std::string>> cands, refs;
  std::vector<std::string> langs;
  const std::size_t max_src = std::min(config.max_source_len, model.config().max_seq_len);
  const std::size_t max_out = std::min(config.max_summary_len, model.config().max_seq_len - 1);
  for (const auto& ex : examples) {
    auto src = code_input_ids(vocab, ex, language_tags, max_src);
    auto out = generate_summary(model, src, max_out, DecodeStrategy::beam(config.beam_size));
    cands.push_back(vocab.decode(out));
    refs.push_back(ex.description);
    langs.push_back(ex.language);
  }
  return bleu_report(cands, refs, langs);
}

MrrReport evaluate_search(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& examples,
                          bool language_tags, const TrainConfig& config) {
  const std::size_t max_src = std::min(config.max_source_len, model.config().max_seq_len);
  std::vector<std::vector<std::int64_t>> ranked;
  std::vector<std::int64_t> gold;
  std::vector<std::string> langs;
  ad::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  for (const auto& lang : languages_of(examples)) {
    std::vector<std::vector<int>> codes, queries;
    std::vector<std::int64_t> ids;
    for (const auto& ex : examples) {
      if (ex.language != lang) continue;
      codes.push_back(code_input_ids(vocab, ex, language_tags, max_src));
      queries.push_back(query_input_ids(vocab, ex, max_src));
      ids.push_back(ex.id);
    }
    auto index = build_index(model, codes, ids, config.pooling, true);
    const std::size_t d = model.config().d_model;
    for (std::size_t start = 0; start < queries.size(); start += 64) {
      std::vector<std::vector<int>> chunk(queries.begin() + static_cast<std::ptrdiff_t>(start),
                                          queries.begin() + static_cast<std::ptrdiff_t>(std::min(queries.size(), start + 64)));
      auto q = embed_sequences(model, TokenBatch::from_sequences(chunk, Vocabulary::kPad), config.pooling, true);
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        ranked.push_back(rank_candidates(q.data().data() + r * d, index));
        gold.push_back(ids[start + r]);
        langs.push_back(lang);
      }
    }
  }
  model.set_training(was_training);
  return mrr(ranked, gold, langs);
}

FinetuneResult finetune(const TransformerModel& base, const Vocabulary& vocab,
                        const std::map<std::string, Split>& splits, const Regime& regime, TaskKind task,
                        const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  FinetuneResult res{RunRecord{}, base.clone(), nullptr};
  RunRecord& rec = res.record;
  rec.regime = regime;
  rec.task = task;
  json cfg = {{"regime", regime.to_json()},
              {"task", to_string(task)},
              {"train", config.to_json()},
              {"model", kv_json(base.config().to_kv())},
              {"base_hash", hash_hex(hash_tensors(base.parameters()))}};
  rec.config_hash = fnv1a_hex(cfg.dump());
  rec.base_hash = hash_hex(hash_tensors(res.model.parameters()));

  const TaskData data = select_data(splits, regime, config.eval_limit);
  ad::NamedTensors trainable;
  if (regime.tuning == Tuning::kFull) {
    res.model.set_base_trainable(true);
    trainable = res.model.parameters();
  } else {
    AdapterConfig ac = config.adapter;
    ac.variant = regime.tuning == Tuning::kAdapterMoe ? AdapterVariant::kMoe : AdapterVariant::kStandard;
    res.bank = inject(res.model, ac, derive_seed(regime.seed, 23));
    trainable = freeze_base(res.model, *res.bank);
  }
  rec.parameters = parameter_report(res.model, res.bank ? &res.bank->parameters() : nullptr);
  train_task(res.model, relevant(trainable, task), vocab, data, regime, task, config, rec);
  rec.base_hash_after = hash_hex(hash_tensors(res.model.parameters()));

  if (!data.test.empty()) {
    if (task == TaskKind::kSummarization) {
      rec.bleu = evaluate_summarization(res.model, vocab, data.test, regime.language_tags, config);
    } else {
      rec.mrr = evaluate_search(res.model, vocab, data.test, regime.language_tags, config);
    }
  }
  rec.seconds = seconds_since(t0);
  return res;
}

// ---------------------------------------------------------------------------
// Protocols

std::vector<CorpusExample> low_resource_sample(const std::vector<CorpusExample>& examples, std::size_t k,
                                               std::uint64_t seed) {
  const auto langs = languages_of(examples);
  std::vector<bool> keep(examples.size(), false);
  for (std::size_t li = 0; li < langs.size(); ++li) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].language == langs[li]) members.push_back(i);
    }
    if (k > members.size()) {
      throw Error("low_resource_sample: k=" + std::to_string(k) + " exceeds the " + std::to_string(members.size()) +
                  " examples of " + langs[li]);
    }
    std::mt19937_64 rng(derive_seed(seed, 0x10000 + li));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < k; ++j) keep[members[j]] = true;
  }
  std::vector<CorpusExample> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (keep[i]) out.push_back(examples[i]);
  }
  return out;
}

double average_over_seeds(const std::vector<std::uint64_t>& seeds, const std::function<double(std::uint64_t)>& fn) {
  if (seeds.empty()) throw Error("average_over_seeds: no seeds");
  double sum = 0.0;
  for (auto s : seeds) sum += fn(s);
  return sum / static_cast<double>(seeds.size());
}

Matrix relative_matrix(const Matrix& adapter, const Matrix& full) {
  if (adapter.size() != full.size()) throw Error("relative_matrix: shape mismatch");
  Matrix out(adapter.size());
  for (std::size_t i = 0; i < adapter.size(); ++i) {
    if (adapter[i].size() != full[i].size()) throw Error("relative_matrix: shape mismatch");
    for (std::size_t j = 0; j < adapter[i].size(); ++j) out[i].push_back((adapter[i][j] - full[i][j]) / full[i][j]);
  }
  return out;
}

CrossLingualResult cross_lingual_matrix(const TransformerModel& base, const Vocabulary& vocab,
                                        const std::map<std::string, Split>& splits, const Regime& regime_template,
                                        const std::vector<std::string>& languages, TaskKind task,
                                        const TrainConfig& config) {
  if (languages.size() < 2) throw Error("cross_lingual_matrix: need at least 2 languages");
  CrossLingualResult r;
  r.languages = languages;
  for (Tuning tuning : {Tuning::kAdapter, Tuning::kFull}) {
    Matrix& m = tuning == Tuning::kAdapter ? r.adapter : r.full;
    for (std::size_t i = 0; i < languages.size(); ++i) {
      Regime regime = regime_template;
      regime.tuning = tuning;
      regime.scope = {DataScope::Kind::kCross, {languages[i]}, languages};
      regime.seed = derive_seed(regime_template.seed, 0x200 + i);
      auto run = finetune(base, vocab, splits, regime, task, config);
      const auto& per = task == TaskKind::kSummarization ? run.record.bleu->per_language : run.record.mrr->per_language;
      std::vector<double> row;
      for (const auto& lang : languages) row.push_back(per.at(lang));
      m.push_back(std::move(row));
    }
  }
  r.relative = relative_matrix(r.adapter, r.full);
  return r;
}

void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& languages,
                      const Matrix& matrix) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "train\\eval";
  for (const auto& l : languages) out << ',' << l;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << languages[i];
    for (double v : matrix[i]) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace adaptlab
