// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/adam.hpp"
#include "adaptlab/tasks.hpp"

#include <gtest/gtest.h>

#include "gradcheck.hpp"

#include <cmath>
#include <filesystem>
#include <random>

namespace {

using namespace adaptlab;
using ad::Tensor;

ModelConfig seq2seq(std::size_t vocab = 30) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers_encoder = 2;
  c.n_layers_decoder = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 16;
  c.dropout = 0.0;
  return c;
}

std::vector<std::vector<int>> random_seqs(std::mt19937_64& rng, std::size_t n, std::size_t lo, std::size_t hi,
                                          int vocab) {
  std::uniform_int_distribution<std::size_t> len(lo, hi);
  std::uniform_int_distribution<int> tok(Vocabulary::kNumSpecials, vocab - 1);
  std::vector<std::vector<int>> out(n);
  for (auto& s : out) {
    s.resize(len(rng));
    for (auto& t : s) t = tok(rng);
  }
  return out;
}

std::vector<std::vector<int>> wrap(std::vector<std::vector<int>> seqs) {
  for (auto& s : seqs) {
    s.insert(s.begin(), Vocabulary::kBos);
    s.push_back(Vocabulary::kEos);
  }
  return seqs;
}

TEST(SummarizationBatch, TargetIsShiftedInputWithEos) {
  auto b = SummarizationBatch::build({{1, 7, 2}, {1, 8, 9, 2}}, {{5, 6, 7}, {8}});
  const std::size_t t = b.decoder_input.seq_len;
  ASSERT_EQ(t, 4u);
  EXPECT_EQ(std::vector<int>(b.decoder_input.ids.begin(), b.decoder_input.ids.begin() + 4),
            (std::vector<int>{1, 5, 6, 7}));
  EXPECT_EQ(std::vector<int>(b.targets.begin(), b.targets.begin() + 4), (std::vector<int>{5, 6, 7, 2}));
  EXPECT_EQ(std::vector<int>(b.targets.begin() + 4, b.targets.end()), (std::vector<int>{8, 2, -1, -1}));
}

TEST(SummarizationLoss, UniformLogitsGiveLogV) {
  TransformerModel model(seq2seq(), 1);
  auto table = model.parameter("embed.token");
  std::fill(table.mutable_data().begin(), table.mutable_data().end(), 0.0);
  auto b = SummarizationBatch::build({{1, 7, 8, 2}}, {{5, 6}});
  EXPECT_NEAR(summarization_loss(model, b).item(), std::log(30.0), 1e-12);
}

TEST(SummarizationLoss, ErrorsForEncoderOnlyAndAllPad) {
  ModelConfig c = seq2seq();
  c.n_layers_decoder = 0;
  TransformerModel enc_only(c, 2);
  auto b = SummarizationBatch::build({{1, 7, 2}}, {{5}});
  EXPECT_THROW(summarization_loss(enc_only, b), Error);
  TransformerModel model(seq2seq(), 2);
  b.targets.assign(b.targets.size(), -1);
  EXPECT_THROW(summarization_loss(model, b), Error);
}

TEST(SummarizationLoss, PermutationInvariantOverRows) {
  TransformerModel model(seq2seq(), 3);
  std::mt19937_64 rng(3);
  auto src = wrap(random_seqs(rng, 4, 2, 8, 30));
  auto tgt = random_seqs(rng, 4, 1, 6, 30);
  const double a = summarization_loss(model, SummarizationBatch::build(src, tgt)).item();
  std::swap(src[0], src[3]);
  std::swap(tgt[0], tgt[3]);
  std::swap(src[1], src[2]);
  std::swap(tgt[1], tgt[2]);
  EXPECT_NEAR(summarization_loss(model, SummarizationBatch::build(src, tgt)).item(), a, 1e-12);
}

double train_steps(TransformerModel& model, const SummarizationBatch& b, int steps, double lr, double* first) {
  ad::AdamState opt({lr});
  double loss = 0.0;
  for (int s = 0; s < steps; ++s) {
    ad::zero_grad(model.parameters());
    auto l = summarization_loss(model, b);
    l.backward();
    opt.step(model.parameters());
    loss = l.item();
    if (s == 0 && first) *first = loss;
  }
  return loss;
}

TEST(SummarizationLoss, DecreasesOnMemorizationSet) {
  TransformerModel model(seq2seq(), 4);
  std::mt19937_64 rng(4);
  auto b = SummarizationBatch::build(wrap(random_seqs(rng, 10, 3, 8, 30)), random_seqs(rng, 10, 2, 6, 30));
  double first = 0.0;
  const double last = train_steps(model, b, 50, 1e-3, &first);
  EXPECT_LT(last, first);
}

TEST(GenerateSummary, BeamOneEqualsGreedyAndMaxLenOne) {
  TransformerModel model(seq2seq(), 5);
  std::mt19937_64 rng(5);
  for (const auto& src : wrap(random_seqs(rng, 10, 2, 8, 30))) {
    EXPECT_EQ(generate_summary(model, src, 8, DecodeStrategy::beam(1)),
              generate_summary(model, src, 8, DecodeStrategy::greedy()));
    EXPECT_EQ(generate_summary(model, src, 1).size(), 1u);
    EXPECT_EQ(generate_summary(model, src, 1, DecodeStrategy::beam(3)).size(), 1u);
  }
  EXPECT_THROW(generate_summary(model, {1, 5, 2}, 0), Error);
}

TEST(GenerateSummary, BeamNeverScoresBelowGreedy) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TransformerModel model(seq2seq(), 100 + seed);
    for (const auto& src : wrap(random_seqs(rng, 4, 2, 8, 30))) {
      const auto g = generate_hypothesis(model, src, 6, DecodeStrategy::greedy());
      for (std::size_t k : {2, 4}) {
        EXPECT_GE(generate_hypothesis(model, src, 6, DecodeStrategy::beam(k)).normalized_score(),
                  g.normalized_score());
      }
    }
  }
}

TEST(GenerateSummary, ReproducesMemorizedPair) {
  TransformerModel model(seq2seq(), 7);
  std::vector<int> src{1, 9, 10, 11, 2}, tgt{12, 13, 14, 15};
  train_steps(model, SummarizationBatch::build({src}, {tgt}), 150, 1e-2, nullptr);
  auto out = generate_summary(model, src, 10);
  auto expect = tgt;
  expect.push_back(Vocabulary::kEos);
  EXPECT_EQ(out, expect);
  EXPECT_EQ(generate_summary(model, src, 10, DecodeStrategy::beam(3)), expect);
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveLogB) {
  Tensor e = Tensor::full({4, 3}, 0.5);
  EXPECT_NEAR(contrastive_loss(e, e, 0.05).item(), std::log(4.0), 1e-12);
}

TEST(ContrastiveLoss, OrthogonalPairsAtLowTemperatureVanish) {
  Tensor e = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_LT(contrastive_loss(e, e, 0.01).item(), 1e-30);
}

TEST(ContrastiveLoss, ErrorsOnSingleRow) {
  Tensor e = Tensor::full({1, 3}, 1.0);
  EXPECT_THROW(contrastive_loss(e, e, 0.05), Error);
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Tensor q = Tensor::randn({3, 4}, 1.0, rng, true);
  Tensor c = Tensor::randn({3, 4}, 1.0, rng, true);
  auto f = [&] { return contrastive_loss(ad::l2_normalize_rows(q), ad::l2_normalize_rows(c), 0.5); };
  EXPECT_LT(adaptlab::testing::max_gradient_error(f, {q, c}), 1e-6);
}

TEST(SearchLoss, BatchOfOneIsError) {
  TransformerModel model(seq2seq(), 9);
  auto b = SearchBatch::build({{1, 5, 2}}, {{1, 6, 2}});
  EXPECT_THROW(search_loss(model, b), Error);
}

TEST(SearchLoss, EmbeddingsAreUnitNorm) {
  TransformerModel model(seq2seq(), 10);
  std::mt19937_64 rng(10);
  auto e = embed_sequences(model, TokenBatch::from_sequences(wrap(random_seqs(rng, 5, 1, 8, 30)), 0));
  for (std::size_t r = 0; r < 5; ++r) {
    double n = 0.0;
    for (std::size_t j = 0; j < 16; ++j) n += e.at(r * 16 + j) * e.at(r * 16 + j);
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(Retrieve, OwnEmbeddingRanksFirstAndTiesGoToLowerId) {
  TransformerModel model(seq2seq(), 11);
  std::mt19937_64 rng(11);
  auto codes = wrap(random_seqs(rng, 6, 2, 8, 30));
  codes.push_back(codes[2]);  // duplicate content under a higher id
  std::vector<std::int64_t> ids{10, 11, 12, 13, 14, 15, 16};
  auto index = build_index(model, codes, ids);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(retrieve(model, codes[i], index)[0], ids[i]);
  auto ranked = retrieve(model, codes[2], index);
  EXPECT_EQ(ranked[0], 12);
  EXPECT_EQ(ranked[1], 16);
}

TEST(Retrieve, MatchesBruteForceSort) {
  TransformerModel model(seq2seq(), 12);
  std::mt19937_64 rng(12);
  auto codes = wrap(random_seqs(rng, 20, 2, 8, 30));
  std::vector<std::int64_t> ids(20);
  for (std::size_t i = 0; i < 20; ++i) ids[i] = static_cast<std::int64_t>(100 - 3 * i);
  auto index = build_index(model, codes, ids);
  auto query = wrap(random_seqs(rng, 1, 3, 6, 30))[0];
  auto qe = encode(model, query, false).states;
  std::vector<double> q(16, 0.0);
  for (std::size_t r = 0; r < query.size(); ++r) {
    for (std::size_t j = 0; j < 16; ++j) q[j] += qe.at(r * 16 + j) / static_cast<double>(query.size());
  }
  // Oracle: selection sort on cosine computed from scratch.
  std::vector<std::pair<double, std::int64_t>> s;
  for (std::size_t i = 0; i < 20; ++i) {
    auto ce = encode(model, codes[i], false).states;
    std::vector<double> c(16, 0.0);
    for (std::size_t r = 0; r < codes[i].size(); ++r) {
      for (std::size_t j = 0; j < 16; ++j) c[j] += ce.at(r * 16 + j) / static_cast<double>(codes[i].size());
    }
    double dot = 0, qq = 0, cc = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      dot += q[j] * c[j];
      qq += q[j] * q[j];
      cc += c[j] * c[j];
    }
    s.emplace_back(dot / std::sqrt(qq * cc), ids[i]);
  }
  std::vector<std::int64_t> expect;
  while (!s.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i].first > s[best].first + 1e-12 ||
          (std::abs(s[i].first - s[best].first) <= 1e-12 && s[i].second < s[best].second)) {
        best = i;
      }
    }
    expect.push_back(s[best].second);
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(best));
  }
  EXPECT_EQ(retrieve(model, query, index), expect);
}

TEST(RetrievalIndex, SaveLoadRoundTrip) {
  TransformerModel model(seq2seq(), 13);
  std::mt19937_64 rng(13);
  auto index = build_index(model, wrap(random_seqs(rng, 5, 2, 6, 30)), {4, 3, 2, 1, 0});
  const auto path = std::filesystem::temp_directory_path() / "adaptlab_index.ckpt";
  index.save(path);
  auto back = RetrievalIndex::load(path);
  EXPECT_EQ(back.ids, index.ids);
  EXPECT_EQ(back.normalized, index.normalized);
  EXPECT_EQ(std::vector<double>(back.embeddings.data().begin(), back.embeddings.data().end()),
            std::vector<double>(index.embeddings.data().begin(), index.embeddings.data().end()));
}

TEST(InputIds, TagsAndTruncation) {
  CorpusExample ex{"cee", {"a", "b", "c", "d"}, {"x", "y"}, 0, false};
  auto vocab = Vocabulary::build({ex}, {"cee"}, true);
  auto ids = code_input_ids(vocab, ex, true, 5);
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(ids[0], Vocabulary::kBos);
  EXPECT_EQ(ids[1], vocab.tag_id("cee"));
  EXPECT_EQ(ids[4], Vocabulary::kEos);
  EXPECT_EQ(code_input_ids(vocab, ex, false, 64).size(), 6u);
  EXPECT_EQ(summary_target_ids(vocab, ex, 2).size(), 1u);
}

}  // namespace
