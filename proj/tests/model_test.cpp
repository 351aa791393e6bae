// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace {

using namespace adaptlab;
using ad::Tensor;

ModelConfig tiny(std::size_t enc = 2, std::size_t dec = 0) {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_layers_encoder = enc;
  c.n_layers_decoder = dec;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 12;
  c.dropout = 0.0;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(ModelConfig, ValidatesInvariants) {
  ModelConfig c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.vocab_size = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.max_seq_len = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(ModelConfig::from_kv(tiny(3, 1).to_kv()).to_kv(), tiny(3, 1).to_kv());
}

TEST(Encode, CaptureGivesLayersPlusOne) {
  TransformerModel model(tiny(12), 1);
  std::vector<int> ids{1, 5, 6, 2};
  auto out = encode(model, ids, true);
  ASSERT_TRUE(out.trace.has_value());
  EXPECT_EQ(out.trace->hidden.size(), 13u);
  EXPECT_FALSE(encode(model, ids, false).trace.has_value());
}

TEST(Encode, EvalModeIsDeterministic) {
  ModelConfig c = tiny();
  c.dropout = 0.3;
  TransformerModel model(c, 2);
  std::vector<int> ids{1, 5, 6, 7, 2};
  EXPECT_EQ(values(encode(model, ids, false).states), values(encode(model, ids, false).states));
  model.set_training(true);
  EXPECT_NE(values(encode(model, ids, false).states), values(encode(model, ids, false).states));
}

TEST(Encode, DistinctInputsGiveDistinctOutputs) {
  TransformerModel model(tiny(), 3);
  std::vector<int> a{1, 5, 6, 2}, b{1, 5, 7, 2};
  EXPECT_NE(values(encode(model, a, false).states), values(encode(model, b, false).states));
}

TEST(Encode, AttentionIsBidirectional) {
  TransformerModel model(tiny(), 4);
  std::vector<int> a{1, 5, 6, 2}, b{1, 5, 6, 9};
  auto sa = encode(model, a, false).states, sb = encode(model, b, false).states;
  // Row 0 sees the changed last token.
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NE(sa.at(c), sb.at(c));
}

TEST(Encode, RejectsOverlongAndOutOfVocab) {
  TransformerModel model(tiny(), 5);
  std::vector<int> long_ids(13, 5);
  EXPECT_THROW(encode(model, long_ids, false), Error);
  std::vector<int> bad{1, 20};
  EXPECT_THROW(encode(model, bad, false), Error);
}

TEST(Encode, PaddingDoesNotLeakIntoValidPositions) {
  TransformerModel model(tiny(), 6);
  std::vector<int> shortseq{1, 5, 2};
  auto alone = encode(model, shortseq, false).states;
  auto batch = TokenBatch::from_sequences({shortseq, {1, 5, 6, 7, 8, 2}}, 0);
  auto packed = model.encode(batch).states;
  for (std::size_t i = 0; i < alone.size(); ++i) EXPECT_NEAR(alone.at(i), packed.at(i), 1e-12);
}

TEST(DecodeStep, EncoderOnlyIsError) {
  TransformerModel model(tiny(), 7);
  std::vector<int> ids{1, 5, 2}, prefix{1};
  auto enc = encode(model, ids, false);
  EXPECT_THROW(decode_step(model, enc, prefix), Error);
}

TEST(DecodeStep, BosOnlyPrefixGivesVocabRow) {
  TransformerModel model(tiny(2, 2), 8);
  std::vector<int> ids{1, 5, 2}, prefix{1};
  auto logits = decode_step(model, encode(model, ids, false), prefix);
  EXPECT_EQ(logits.size(), 20u);
}

TEST(DecodeStep, CausalMaskProperty) {
  TransformerModel model(tiny(2, 2), 9);
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> tok(4, 19);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> src{1, tok(rng), tok(rng), 2};
    std::vector<int> prefix{1, tok(rng), tok(rng), tok(rng), tok(rng)};
    auto enc = encode(model, src, false);
    Tensor base = decode_all_positions(model, enc, prefix);
    const std::size_t t = static_cast<std::size_t>(trial % 4);
    auto changed = prefix;
    changed[t + 1] = changed[t + 1] == 4 ? 5 : 4;
    Tensor pert = decode_all_positions(model, enc, changed);
    for (std::size_t p = 0; p <= t; ++p) {
      for (std::size_t v = 0; v < 20; ++v) EXPECT_EQ(base.at(p * 20 + v), pert.at(p * 20 + v));
    }
    bool later_changed = false;
    for (std::size_t v = 0; v < 20; ++v) later_changed |= base.at((t + 1) * 20 + v) != pert.at((t + 1) * 20 + v);
    EXPECT_TRUE(later_changed);
  }
}

TEST(Registry, SaveLoadRoundTripIsBitwise) {
  TransformerModel model(tiny(2, 1), 10);
  const auto path = std::filesystem::temp_directory_path() / "adaptlab_model_roundtrip.ckpt";
  model.save(path);
  TransformerModel loaded = TransformerModel::load(path);
  ASSERT_EQ(loaded.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(loaded.parameters()[i].first, model.parameters()[i].first);
    EXPECT_EQ(loaded.parameters()[i].second.shape(), model.parameters()[i].second.shape());
    EXPECT_EQ(values(loaded.parameters()[i].second), values(model.parameters()[i].second));
  }
  std::filesystem::remove(path);
  EXPECT_THROW(TransformerModel::load(path), Error);
}

TEST(Registry, EncoderOnlyHasNoDecoderParams) {
  TransformerModel model(tiny(), 11);
  for (const auto& [name, t] : model.parameters()) EXPECT_NE(name.rfind("decoder.", 0), 0u) << name;
}

TEST(ParameterReport, ClosedFormMatchesRegistry) {
  for (std::size_t enc : {1, 2, 3}) {
    for (std::size_t dec : {0, 1, 2}) {
      for (bool tie : {true, false}) {
        ModelConfig c = tiny(enc, dec);
        c.tie_embeddings = tie;
        TransformerModel model(c, 12);
        EXPECT_EQ(base_parameter_count(c), count_parameters(model.parameters()));
      }
    }
  }
}

TEST(ParameterReport, RatioDefinition) {
  ParameterReport r{1000, 30, 30};
  EXPECT_DOUBLE_EQ(r.ratio_vs_k_monolingual(6), 30.0 / 6000.0);
  EXPECT_THROW(r.ratio_vs_k_monolingual(0), Error);
}

}  // namespace
