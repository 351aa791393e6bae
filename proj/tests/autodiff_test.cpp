// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/adam.hpp"
#include "adaptlab/autodiff.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using adaptlab::Error;
using adaptlab::ad::Tensor;
namespace ad = adaptlab::ad;
using adaptlab::testing::max_gradient_error;

constexpr double kGradTol = 1e-3;

Tensor param(ad::Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), stddev, rng, true);
}

// Reduces any tensor to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(t, Tensor::randn(t.shape(), 1.0, rng)));
}

TEST(ForwardOps, IdentityMatmul) {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = ad::matmul(eye, x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(ForwardOps, SoftmaxOfZerosIsUniform) {
  Tensor y = ad::softmax(Tensor::from_data({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(ForwardOps, LayerNormOfConstantIsBias) {
  Tensor x = Tensor::full({1, 4}, 3.5);
  Tensor gamma = Tensor::from_data({4}, {2, 2, 2, 2});
  Tensor beta = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4});
  Tensor y = ad::layer_norm(x, gamma, beta);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.at(i), beta.at(i));
}

TEST(ForwardOps, CrossEntropyOfUniformLogitsIsLogV) {
  Tensor logits = Tensor::zeros({3, 7});
  std::vector<int> targets{1, 4, 6};
  EXPECT_NEAR(ad::cross_entropy(logits, targets).item(), std::log(7.0), 1e-12);
}

TEST(ForwardOps, CrossEntropyIgnoresPaddingAndRejectsAllIgnored) {
  Tensor logits = Tensor::from_data({2, 2}, {0, 0, 5, -5});
  std::vector<int> one{0, -1};
  EXPECT_NEAR(ad::cross_entropy(logits, one).item(), std::log(2.0), 1e-12);
  std::vector<int> none{-1, -1};
  EXPECT_THROW(ad::cross_entropy(logits, none), Error);
  std::vector<int> bad{0, 2};
  EXPECT_THROW(ad::cross_entropy(logits, bad), Error);
}

TEST(ForwardOps, ShapeMismatchNamesOpAndShapes) {
  try {
    ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected throw";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), Error);
}

TEST(ForwardOps, NonFiniteInputIsRejected) {
  Tensor x = Tensor::from_data({2}, {1.0, std::nan("")});
  EXPECT_THROW(ad::relu(x), Error);
  Tensor y = Tensor::from_data({1, 2}, {INFINITY, 0.0});
  EXPECT_THROW(ad::matmul(y, Tensor::zeros({2, 1})), Error);
}

TEST(ForwardOps, TopkSoftmaxKeepsExactlyKWithLowIndexTies) {
  Tensor logits = Tensor::from_data({2, 4}, {1, 3, 3, 0, 5, 5, 5, 5});
  Tensor w = ad::topk_softmax(logits, 2);
  EXPECT_EQ(w.at(0), 0.0);
  EXPECT_DOUBLE_EQ(w.at(1), 0.5);
  EXPECT_DOUBLE_EQ(w.at(2), 0.5);
  EXPECT_EQ(w.at(3), 0.0);
  EXPECT_DOUBLE_EQ(w.at(4), 0.5);
  EXPECT_DOUBLE_EQ(w.at(5), 0.5);
  EXPECT_EQ(w.at(6), 0.0);
  EXPECT_EQ(w.at(7), 0.0);
  EXPECT_THROW(ad::topk_softmax(logits, 5), Error);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ad::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x = Tensor::from_data({1}, {3}, true);
  ad::sum(ad::mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::from_data({1}, {3}, true);
  Tensor root = ad::sum(ad::mul(x, x));
  root.backward();
  root.backward();
  EXPECT_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  root.backward();
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarRootIsError) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(ad::scale(x, 2.0).backward(), Error);
}

TEST(Backward, NoGraphModes) {
  Tensor x = Tensor::from_data({2}, {1, 2});
  Tensor y = ad::sum(ad::mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
  EXPECT_THROW(y.backward(), Error);

  Tensor p = Tensor::from_data({2}, {1, 2}, true);
  ad::NoGradGuard guard;
  Tensor z = ad::sum(ad::mul(p, p));
  EXPECT_FALSE(z.requires_grad());
  EXPECT_TRUE(z.node()->parents.empty());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks, one per operator.

TEST(GradCheck, Matmul) {
  std::mt19937_64 rng(1);
  Tensor a = param({3, 4}, rng), b = param({4, 2}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::matmul(a, b)); }, {a, b}), kGradTol);
}

TEST(GradCheck, BroadcastArithmetic) {
  std::mt19937_64 rng(2);
  Tensor a = param({3, 4}, rng), b = param({4}, rng), c = param({3, 4}, rng), s = param({1}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::add(a, b)); }, {a, b}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::sub(a, c)); }, {a, c}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::mul(a, b)); }, {a, b}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::mul(a, s)); }, {a, s}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::scale(a, -1.7)); }, {a}), kGradTol);
}

TEST(GradCheck, SoftmaxAndLayerNorm) {
  std::mt19937_64 rng(3);
  Tensor x = param({3, 5}, rng), g = param({5}, rng), b = param({5}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::softmax(x)); }, {x}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::layer_norm(x, g, b)); }, {x, g, b}), kGradTol);
}

TEST(GradCheck, Activations) {
  std::mt19937_64 rng(4);
  Tensor x = param({4, 5}, rng);
  // Keep relu inputs away from the kink.
  for (double& v : x.mutable_data()) v += v > 0 ? 0.1 : -0.1;
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::gelu(x)); }, {x}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::relu(x)); }, {x}), kGradTol);
}

TEST(GradCheck, EmbeddingReshapeTranspose) {
  std::mt19937_64 rng(5);
  Tensor table = param({6, 3}, rng), x = param({2, 6}, rng);
  std::vector<int> ids{0, 3, 3, 5};
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::embedding(table, ids)); }, {table}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::reshape(x, {3, 4})); }, {x}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::transpose(x)); }, {x}), kGradTol);
}

TEST(GradCheck, Reductions) {
  std::mt19937_64 rng(6);
  Tensor x = param({3, 4}, rng);
  EXPECT_LT(max_gradient_error([&] { return ad::mean(ad::mul(x, x)); }, {x}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return ad::sum(ad::mul(x, x)); }, {x}), kGradTol);
  std::vector<std::size_t> lengths{2, 1, 3};
  Tensor y = param({9, 2}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::masked_mean_pool(y, 3, lengths)); }, {y}), kGradTol);
}

TEST(GradCheck, CrossEntropy) {
  std::mt19937_64 rng(7);
  Tensor logits = param({4, 6}, rng);
  std::vector<int> targets{2, -1, 0, 5};
  EXPECT_LT(max_gradient_error([&] { return ad::cross_entropy(logits, targets); }, {logits}), kGradTol);
}

TEST(GradCheck, NormalizeRepeatConcat) {
  std::mt19937_64 rng(8);
  Tensor x = param({3, 4}, rng), w = param({3, 2}, rng), z = param({2, 4}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::l2_normalize_rows(x)); }, {x}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::repeat_columns(w, 3)); }, {w}), kGradTol);
  std::vector<Tensor> parts{x, z};
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::concat_rows(parts)); }, {x, z}), kGradTol);
}

TEST(GradCheck, TopkSoftmax) {
  std::mt19937_64 rng(9);
  Tensor logits = param({5, 4}, rng);
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::topk_softmax(logits, 2)); }, {logits}), kGradTol);
}

TEST(GradCheck, AttentionMaskedAndCausal) {
  std::mt19937_64 rng(10);
  Tensor q = param({2 * 3, 4}, rng), k = param({2 * 4, 4}, rng), v = param({2 * 4, 4}, rng);
  ad::AttentionLayout cross{2, 3, 4, 2, false, {4, 2}};
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::attention(q, k, v, cross)); }, {q, k, v}), kGradTol);
  Tensor s = param({2 * 4, 4}, rng);
  ad::AttentionLayout causal{2, 4, 4, 2, true, {4, 3}};
  EXPECT_LT(max_gradient_error([&] { return weighted_sum(ad::attention(s, s, s, causal)); }, {s}), kGradTol);
}

TEST(GradCheck, ThreeLayerMlp) {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::randn({5, 4}, 1.0, rng);
  Tensor w1 = param({4, 8}, rng, 0.5), b1 = param({8}, rng, 0.1);
  Tensor w2 = param({8, 8}, rng, 0.5), b2 = param({8}, rng, 0.1);
  Tensor w3 = param({8, 3}, rng, 0.5), b3 = param({3}, rng, 0.1);
  std::vector<int> labels{0, 2, 1, 1, 0};
  auto loss = [&] {
    Tensor h = ad::gelu(ad::add(ad::matmul(x, w1), b1));
    h = ad::gelu(ad::add(ad::matmul(h, w2), b2));
    return ad::cross_entropy(ad::add(ad::matmul(h, w3), b3), labels);
  };
  EXPECT_LT(max_gradient_error(loss, {w1, b1, w2, b2, w3, b3}), kGradTol);
}

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor a = param({4, 4}, rng), b = param({4, 4}, rng);
    Tensor root = ad::sum(ad::softmax(ad::matmul(a, b)));
    ad::sum(ad::mul(ad::softmax(ad::matmul(a, b)), a)).backward();
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.push_back(root.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParams) {
  Tensor p = Tensor::from_data({3}, {1, -2, 3}, true);
  p.mutable_grad();
  ad::AdamState adam({0.1});
  adam.step({{"p", p}});
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), -2.0);
  EXPECT_EQ(p.at(2), 3.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m_hat = g = 1, v_hat = g^2 = 1, so the step is lr / (1 + eps).
  Tensor p = Tensor::from_data({1}, {0.5}, true);
  p.mutable_grad()[0] = 1.0;
  ad::AdamState adam({0.1});
  adam.step({{"p", p}});
  EXPECT_NEAR(0.5 - p.at(0), 0.1, 1e-8);
  EXPECT_EQ(p.grad()[0], 1.0);
  adam.step({{"p", p}});
  EXPECT_EQ(adam.step_count(), 2u);
}

TEST(Adam, MissingGradientNamesParameter) {
  Tensor p = Tensor::from_data({1}, {0.5}, true);
  ad::AdamState adam;
  try {
    adam.step({{"encoder.0.attn.q.weight", p}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.0.attn.q.weight"), std::string::npos);
  }
}

}  // namespace
