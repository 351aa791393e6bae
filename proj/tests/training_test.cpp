// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/checkpoint.hpp"
#include "adaptlab/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace {

using namespace adaptlab;

struct Fixture {
  std::vector<CorpusExample> corpus;
  Vocabulary vocab;
  std::map<std::string, Split> splits;
  std::vector<std::string> languages;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    SyntheticOptions o;
    o.n_per_language = 40;
    o.seed = 3;
    o.knobs.max_tokens = 30;
    f.corpus = generate_synthetic(default_languages(2), o);
    f.languages = languages_of(f.corpus);
    f.vocab = Vocabulary::build(f.corpus, f.languages, true);
    f.splits = split(f.corpus, {0.6, 0.2, 0.2}, 5);
    return f;
  }();
  return f;
}

ModelConfig tiny(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers_encoder = 1;
  c.n_layers_decoder = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 48;
  c.dropout = 0.0;
  return c;
}

TrainConfig quick() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.max_source_len = 48;
  t.max_summary_len = 16;
  t.adapter.bottleneck_dim = 4;
  t.adapter.moe_expert_dim = 4;
  t.adapter.moe_experts = 2;
  t.adapter.moe_top_k = 1;
  return t;
}

Regime multilingual(Tuning tuning, std::uint64_t seed = 1) {
  Regime r;
  r.tuning = tuning;
  r.scope = DataScope::multilingual(fixture().languages);
  r.seed = seed;
  return r;
}

TEST(MaskTokens, RateZeroMasksNothing) {
  const auto& f = fixture();
  std::mt19937_64 rng(1);
  auto ids = code_input_ids(f.vocab, f.corpus[0], false, 48);
  auto m = mask_tokens(ids, f.vocab, 0.0, rng);
  EXPECT_EQ(m.input, ids);
  for (int t : m.targets) EXPECT_EQ(t, -1);
}

TEST(MaskTokens, MasksRoundedShareOfPlainTokensOnly) {
  const auto& f = fixture();
  std::mt19937_64 rng(2);
  auto ids = code_input_ids(f.vocab, f.corpus[1], true, 48);
  std::size_t plain = 0;
  for (int id : ids) plain += f.vocab.is_special(id) ? 0 : 1;
  auto m = mask_tokens(ids, f.vocab, 0.15, rng);
  std::size_t masked = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (m.targets[i] < 0) {
      EXPECT_EQ(m.input[i], ids[i]);
      continue;
    }
    ++masked;
    EXPECT_FALSE(f.vocab.is_special(ids[i]));
    EXPECT_EQ(m.targets[i], ids[i]);
  }
  EXPECT_EQ(masked, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * plain))));
}

TEST(MlmLoss, NoMaskedPositionIsAnError) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 1);
  std::mt19937_64 rng(1);
  auto ids = code_input_ids(f.vocab, f.corpus[0], false, 48);
  auto m = mask_tokens(ids, f.vocab, 0.0, rng);
  EXPECT_THROW(mlm_loss(model, {m}, {ids}), Error);
}

TEST(Pretrain, LossDecreases) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 4);
  PretrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.max_len = 48;
  auto r = pretrain_mlm(model, f.vocab, f.corpus, cfg);
  ASSERT_EQ(r.losses.size(), 200u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r.losses[i];
    tail += r.losses[190 + i];
  }
  EXPECT_LT(tail, 0.8 * head);
}

TEST(Pretrain, FiveHundredStepsEndBelowTheFirstStep) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 8);
  PretrainConfig cfg;
  cfg.max_len = 48;
  cfg.seed = 2;
  auto r = pretrain_mlm(model, f.vocab, f.corpus, cfg);
  ASSERT_EQ(r.losses.size(), 500u);
  EXPECT_LT(r.losses.back(), r.losses.front());
}

TEST(Pretrain, SameSeedGivesIdenticalWeights) {
  const auto& f = fixture();
  PretrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 4;
  cfg.max_len = 48;
  cfg.seed = 9;
  TransformerModel a(tiny(f.vocab.size()), 4), b(tiny(f.vocab.size()), 4);
  pretrain_mlm(a, f.vocab, f.corpus, cfg);
  pretrain_mlm(b, f.vocab, f.corpus, cfg);
  EXPECT_EQ(hash_tensors(a.parameters()), hash_tensors(b.parameters()));
}

TEST(Pretrain, RejectsZeroStepsAndSingleLanguage) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 4);
  PretrainConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(pretrain_mlm(model, f.vocab, f.corpus, cfg), Error);
  cfg.steps = 1;
  std::vector<CorpusExample> one;
  for (const auto& ex : f.corpus) {
    if (ex.language == f.languages[0]) one.push_back(ex);
  }
  EXPECT_THROW(pretrain_mlm(model, f.vocab, one, cfg), Error);
}

TEST(Batches, MonolingualBatchesHoldOneLanguage) {
  const auto& f = fixture();
  std::mt19937_64 rng(3);
  auto batches = make_batches(f.corpus, 7, Batching::kMonolingual, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    std::set<std::string> langs;
    for (auto i : b) {
      langs.insert(f.corpus[i].language);
      seen.insert(i);
    }
    EXPECT_EQ(langs.size(), 1u);
  }
  EXPECT_EQ(seen.size(), f.corpus.size());
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), f.corpus.size());
}

TEST(Batches, MultilingualBatchesMixLanguages) {
  const auto& f = fixture();
  std::mt19937_64 rng(3);
  auto batches = make_batches(f.corpus, 16, Batching::kMultilingual, rng);
  std::size_t mixed = 0;
  for (const auto& b : batches) {
    std::set<std::string> langs;
    for (auto i : b) langs.insert(f.corpus[i].language);
    mixed += langs.size() > 1;
  }
  EXPECT_GT(mixed, 0u);
}

TEST(Finetune, AdapterRegimeLeavesBaseUntouched) {
  const auto& f = fixture();
  TransformerModel base(tiny(f.vocab.size()), 6);
  const auto before = hash_tensors(base.parameters());
  auto run = finetune(base, f.vocab, f.splits, multilingual(Tuning::kAdapter), TaskKind::kSummarization, quick());
  EXPECT_EQ(run.record.base_hash, run.record.base_hash_after);
  EXPECT_EQ(hash_tensors(base.parameters()), before);
  ASSERT_TRUE(run.record.bleu.has_value());
  EXPECT_EQ(run.record.train_loss.size(), 2u);
  EXPECT_NE(run.bank, nullptr);
}

TEST(Finetune, FullRegimeChangesBaseWeights) {
  const auto& f = fixture();
  TransformerModel base(tiny(f.vocab.size()), 6);
  auto run = finetune(base, f.vocab, f.splits, multilingual(Tuning::kFull), TaskKind::kSummarization, quick());
  EXPECT_NE(run.record.base_hash, run.record.base_hash_after);
  EXPECT_EQ(run.bank, nullptr);
  EXPECT_EQ(run.record.parameters.trainable_params, run.record.parameters.base_params);
}

TEST(Finetune, TrainableCountsMatchReport) {
  const auto& f = fixture();
  TransformerModel base(tiny(f.vocab.size()), 6);
  for (Tuning t : {Tuning::kAdapter, Tuning::kAdapterMoe}) {
    auto cfg = quick();
    cfg.epochs = 1;
    auto run = finetune(base, f.vocab, f.splits, multilingual(t), TaskKind::kSearch, cfg);
    ASSERT_NE(run.bank, nullptr);
    EXPECT_EQ(run.record.parameters.trainable_params, count_parameters(run.bank->parameters()));
    EXPECT_EQ(run.record.parameters.adapter_params, count_parameters(run.bank->parameters()));
    EXPECT_EQ(count_trainable(run.model.parameters()), 0u);
    ASSERT_TRUE(run.record.mrr.has_value());
    EXPECT_GT(run.record.mrr->overall, 0.0);
  }
}

TEST(Finetune, SameSeedIsBitwiseReproducible) {
  const auto& f = fixture();
  TransformerModel base(tiny(f.vocab.size()), 6);
  auto a = finetune(base, f.vocab, f.splits, multilingual(Tuning::kAdapter, 4), TaskKind::kSearch, quick());
  auto b = finetune(base, f.vocab, f.splits, multilingual(Tuning::kAdapter, 4), TaskKind::kSearch, quick());
  EXPECT_EQ(a.record.config_hash, b.record.config_hash);
  EXPECT_EQ(a.record.train_loss, b.record.train_loss);
  EXPECT_EQ(a.record.mrr->per_language, b.record.mrr->per_language);
  EXPECT_EQ(hash_tensors(a.bank->parameters()), hash_tensors(b.bank->parameters()));
}

TEST(Finetune, EmptyScopeIsAnError) {
  const auto& f = fixture();
  TransformerModel base(tiny(f.vocab.size()), 6);
  Regime r = multilingual(Tuning::kAdapter);
  r.scope.train_languages.clear();
  EXPECT_THROW(finetune(base, f.vocab, f.splits, r, TaskKind::kSearch, quick()), Error);
  r.scope = DataScope::monolingual("klingon");
  EXPECT_THROW(finetune(base, f.vocab, f.splits, r, TaskKind::kSearch, quick()), Error);
}

TEST(TrainTask, AdapterRegimeWithoutInjectionIsAnError) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 6);
  Regime r = multilingual(Tuning::kAdapter);
  auto data = select_data(f.splits, r, 0);
  RunRecord rec;
  EXPECT_THROW(train_task(model, model.parameters(), f.vocab, data, r, TaskKind::kSummarization, quick(), rec), Error);
}

TEST(TrainTask, RestoresBestDevWeights) {
  const auto& f = fixture();
  TransformerModel model(tiny(f.vocab.size()), 6);
  Regime r = multilingual(Tuning::kFull);
  auto data = select_data(f.splits, r, 0);
  auto cfg = quick();
  cfg.epochs = 4;
  cfg.patience = 0;
  cfg.lr_full = 3e-2;  // large enough that dev loss is not monotone
  RunRecord rec;
  model.set_base_trainable(true);
  train_task(model, model.parameters(), f.vocab, data, r, TaskKind::kSummarization, cfg, rec);
  ASSERT_EQ(rec.dev_loss.size(), 4u);
  const double best = *std::min_element(rec.dev_loss.begin(), rec.dev_loss.end());
  EXPECT_DOUBLE_EQ(rec.dev_loss[rec.best_epoch], best);
  ad::NoGradGuard no_grad;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < data.dev.size(); s += cfg.batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t i = s; i < std::min(data.dev.size(), s + cfg.batch_size); ++i) rows.push_back(i);
    sum += task_loss(model, f.vocab, data.dev, rows, TaskKind::kSummarization, false, cfg).item() *
           static_cast<double>(rows.size());
    n += rows.size();
  }
  EXPECT_NEAR(sum / static_cast<double>(n), best, 1e-12);
}

TEST(LowResource, SamplesKPerLanguage) {
  SyntheticOptions o;
  o.n_per_language = 300;
  o.knobs.max_tokens = 40;
  auto corpus = generate_synthetic(default_languages(4), o);
  auto s = low_resource_sample(corpus, 200, 1);
  EXPECT_EQ(s.size(), 800u);
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : s) ++counts[ex.language];
  for (const auto& [lang, c] : counts) EXPECT_EQ(c, 200u) << lang;
  EXPECT_EQ(counts.size(), 4u);

  auto all = low_resource_sample(corpus, 300, 1);
  ASSERT_EQ(all.size(), corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].id, corpus[i].id);

  auto ids = [](const std::vector<CorpusExample>& v) {
    std::set<std::int64_t> out;
    for (const auto& ex : v) out.insert(ex.id);
    return out;
  };
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    EXPECT_NE(ids(low_resource_sample(corpus, 200, 100 + 2 * trial)), ids(low_resource_sample(corpus, 200, 101 + 2 * trial)));
  }
  EXPECT_EQ(ids(low_resource_sample(corpus, 200, 1)), ids(s));
  EXPECT_THROW(low_resource_sample(corpus, 301, 1), Error);
}

TEST(LowResource, RegimeAppliesSampling) {
  const auto& f = fixture();
  Regime r = multilingual(Tuning::kAdapter);
  r.samples_per_language = 5;
  auto d = select_data(f.splits, r, 3);
  EXPECT_EQ(d.train.size(), 10u);
  EXPECT_EQ(d.dev.size(), 6u);
  EXPECT_EQ(d.test.size(), 6u);
}

TEST(SelectData, TestExamplesNeverAppearInTrain) {
  const auto& f = fixture();
  auto splits = f.splits;
  auto& first = splits.begin()->second;
  first.test.push_back(first.train.front());
  EXPECT_THROW(select_data(splits, multilingual(Tuning::kFull), 0), Error);
}

TEST(Protocols, RelativeMatrixFixture) {
  Matrix adapter{{0.2, 0.3}, {0.1, 0.5}};
  Matrix full{{0.25, 0.3}, {0.2, 0.4}};
  auto rel = relative_matrix(adapter, full);
  EXPECT_NEAR(rel[0][0], -0.2, 1e-12);
  EXPECT_NEAR(rel[0][1], 0.0, 1e-12);
  EXPECT_NEAR(rel[1][0], -0.5, 1e-12);
  EXPECT_NEAR(rel[1][1], 0.25, 1e-12);
  EXPECT_THROW(relative_matrix(adapter, {{1.0}}), Error);
}

TEST(Protocols, AverageOverSeeds) {
  EXPECT_DOUBLE_EQ(average_over_seeds({1, 2, 3}, [](std::uint64_t s) { return static_cast<double>(s); }), 2.0);
  EXPECT_THROW(average_over_seeds({}, [](std::uint64_t) { return 0.0; }), Error);
}

TEST(Protocols, MatrixCsv) {
  auto path = std::filesystem::temp_directory_path() / "adaptlab_matrix.csv";
  write_matrix_csv(path, {"a", "b"}, {{1.0, 0.5}, {0.25, -1.0}});
  std::ifstream in(path);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header, "train\\eval,a,b");
  EXPECT_EQ(row1, "a,1.000000,0.500000");
  EXPECT_EQ(row2, "b,0.250000,-1.000000");
  std::filesystem::remove(path);
}

TEST(Enums, RoundTrip) {
  for (auto t : {Tuning::kFull, Tuning::kAdapter, Tuning::kAdapterMoe}) EXPECT_EQ(tuning_from_string(to_string(t)), t);
  for (auto b : {Batching::kMultilingual, Batching::kMonolingual}) EXPECT_EQ(batching_from_string(to_string(b)), b);
  for (auto k : {TaskKind::kSummarization, TaskKind::kSearch}) EXPECT_EQ(task_from_string(to_string(k)), k);
  EXPECT_THROW(tuning_from_string("lora"), Error);
}

}  // namespace
