// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaptlab {

/// Base error type for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adaptlab

namespace adaptlab::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

/// Dense row-major float64 tensor with an optional reverse-mode tape.
///
/// A Tensor is a cheap handle; copies share the same storage. Values are
/// immutable once created except through mutable_data(), which is reserved
/// for optimizers and checkpoint loading of leaf parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Normal(0, stddev) initialised tensor.
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Name of the op that produced this tensor ("leaf" for inputs).
  const std::string& op_name() const;

  /// Reverse-mode differentiation from a scalar root. Gradients accumulate
  /// into requires_grad leaves; intermediate gradients are rebuilt each call.
  void backward() const;

  /// Fresh leaf holding a copy of the values (no history).
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward_fn);
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Creates an op output; records history when grad mode is on and any parent
// requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

// ---------------------------------------------------------------------------
// Operators. All throw adaptlab::Error on shape mismatch (message names the op
// and both shapes) and on non-finite input values.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise add. `b` may have the same shape as `a`, be a trailing suffix
/// of it (row broadcast), or be a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product with the same broadcasting rules as add().
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);
/// Layer normalisation over the last axis with affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
/// Rows of `table` ([V, d]) selected by ids, giving [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor reshape(const Tensor& a, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
/// Mean of all elements (scalar).
Tensor mean(const Tensor& a);
/// Sum of all elements (scalar).
Tensor sum(const Tensor& a);
/// Mean token-level cross entropy of logits [N, V] against targets; entries
/// equal to ignore_index are skipped. Throws when no target is supervised.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -1);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& a, double p, bool training, std::mt19937_64& rng);

/// Row-wise L2 normalisation of a 2-D tensor.
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);

/// Mean over the first lengths[b] rows of each of the B contiguous blocks of
/// `seq_len` rows in x [B*seq_len, d]; returns [B, d].
Tensor masked_mean_pool(const Tensor& x, std::size_t seq_len, std::span<const std::size_t> lengths);

/// Multi-head scaled dot-product attention over packed batches.
/// q: [B*tq, d], k and v: [B*tk, d]. Keys at positions >= key_lengths[b] are
/// masked out; with `causal`, query i only sees keys j <= i.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  bool causal = false;
  std::vector<std::size_t> key_lengths;  // size batch
};
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

/// Per row, keeps the k largest logits (ties to the lower column) and returns
/// their softmax; all other entries are exactly zero.
Tensor topk_softmax(const Tensor& logits, std::size_t k);

/// Repeats every column of a [N, E] tensor `block` times giving [N, E*block].
Tensor repeat_columns(const Tensor& a, std::size_t block);

/// Concatenates 2-D tensors with equal column counts along rows.
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace adaptlab::ad
