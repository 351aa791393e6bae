// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace adaptlab::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;
using Stride = Eigen::OuterStride<>;
using ConstStrided = Eigen::Map<const MatR, 0, Stride>;
using MutStrided = Eigen::Map<MatR, 0, Stride>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite input value");
  }
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw Error(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

// Broadcast of b over a: same shape, trailing suffix, or single element.
bool broadcastable(const Shape& a, const Shape& b) {
  if (numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

ConstMap cmap(const Node& n, std::size_t rows, std::size_t cols) {
  return ConstMap(n.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw Error("tensor: shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                " values, got " + std::to_string(data.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error("tensor: zero-sized dimension in " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw Error("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}
std::size_t Tensor::size() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw Error("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("grad: tensor has no gradient");
  return node_->grad;
}
std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}
void Tensor::zero_grad() { node_->grad.clear(); }
const std::string& Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

void Tensor::backward() const {
  if (size() != 1) throw Error("backward: root must be a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) throw Error("backward: root does not require grad (no graph recorded)");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = g_grad_enabled &&
               std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Operators

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  check_finite("matmul", a);
  check_finite("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = cmap(*a.node(), m, k) * cmap(*b.node(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      pa.ensure_grad();
      MutMap(pa.grad.data(), m, k).noalias() += g * cmap(pb, k, n).transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      MutMap(pb.grad.data(), k, n).noalias() += cmap(pa, m, k).transpose() * g;
    }
  });
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const char* op, BinaryKind kind, const Tensor& a, const Tensor& b) {
  if (!broadcastable(a.shape(), b.shape())) shape_error(op, a.shape(), b.shape());
  check_finite(op, a);
  check_finite(op, b);
  const std::size_t n = a.size(), nb = b.size();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double y = bd[nb == n ? i : i % nb];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = ad[i] + y; break;
      case BinaryKind::kSub: out[i] = ad[i] - y; break;
      case BinaryKind::kMul: out[i] = ad[i] * y; break;
    }
  }
  return make_result(op, a.shape(), std::move(out), {a, b}, [kind, n, nb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        pa.grad[i] += kind == BinaryKind::kMul ? self.grad[i] * pb.data[nb == n ? i : i % nb] : self.grad[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = nb == n ? i : i % nb;
        switch (kind) {
          case BinaryKind::kAdd: pb.grad[j] += self.grad[i]; break;
          case BinaryKind::kSub: pb.grad[j] -= self.grad[i]; break;
          case BinaryKind::kMul: pb.grad[j] += self.grad[i] * pa.data[i]; break;
        }
      }
    }
  });
}

// Applies f elementwise; df(x, y) is the derivative given input x and output y.
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  check_finite(op, a);
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) p.grad[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary("gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](double x, double) {
                 return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
               });
}

Tensor softmax(const Tensor& a) {
  check_finite("softmax", a);
  const std::size_t cols = last_dim(a), rows = a.size() / cols;
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return make_result("softmax", a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t cols = last_dim(x), rows = x.size() / cols;
  if (gamma.size() != cols) shape_error("layer_norm", x.shape(), gamma.shape());
  if (beta.size() != cols) shape_error("layer_norm", x.shape(), beta.shape());
  check_finite("layer_norm", x);
  check_finite("layer_norm", gamma);
  check_finite("layer_norm", beta);
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gd[c] + bd[c];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [rows, cols, xhat, rstd](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       if (pg.requires_grad) pg.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       if (px.requires_grad) px.ensure_grad();
                       const double inv_n = 1.0 / static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * cols;
                         const double* h = xhat->data() + r * cols;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           if (pg.requires_grad) pg.grad[c] += g[c] * h[c];
                           if (pb.requires_grad) pb.grad[c] += g[c];
                           const double dh = g[c] * pg.data[c];
                           mean_dh += dh;
                           mean_dh_h += dh * h[c];
                         }
                         if (!px.requires_grad) continue;
                         mean_dh *= inv_n;
                         mean_dh_h *= inv_n;
                         for (std::size_t c = 0; c < cols; ++c) {
                           const double dh = g[c] * pg.data[c];
                           px.grad[r * cols + c] += (*rstd)[r] * (dh - mean_dh - h[c] * mean_dh_h);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2("embedding", table);
  if (ids.empty()) throw Error("embedding: empty id list");
  check_finite("embedding", table);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw Error("embedding: id " + std::to_string(idx[i]) + " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  const std::size_t rows = idx.size();
  return make_result("embedding", {rows, d}, std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = p.grad.data() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  check_finite("reshape", a);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  check_finite("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = cmap(*a.node(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    MutMap(p.grad.data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
  });
}

Tensor sum(const Tensor& a) {
  check_finite("sum", a);
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {1}, {total}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  check_finite("mean", a);
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.size());
  return make_result("mean", {1}, {total / n}, {a}, [n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0] / n;
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_rank2("cross_entropy", logits);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows) shape_error("cross_entropy", logits.shape(), {targets.size()});
  check_finite("cross_entropy", logits);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t count = 0;
  for (int t : tgt) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw Error("cross_entropy: target " + std::to_string(t) + " is not a class index below " + std::to_string(cols));
    }
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: no supervised targets");
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  const auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] == ignore_index) continue;
    const double* x = ld.data() + r * cols;
    double* p = probs->data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (p[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) p[c] /= total;
    loss += mx + std::log(total) - x[tgt[r]];
  }
  const double n = static_cast<double>(count);
  return make_result("cross_entropy", {1}, {loss / n}, {logits},
                     [probs, tgt = std::move(tgt), rows, cols, n, ignore_index](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       const double g = self.grad[0] / n;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (tgt[r] == ignore_index) continue;
                         for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += g * (*probs)[r * cols + c];
                         p.grad[r * cols + static_cast<std::size_t>(tgt[r])] -= g;
                       }
                     });
}

Tensor dropout(const Tensor& a, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout: probability must be below 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(a, Tensor::from_data(a.shape(), std::move(mask)));
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require_rank2("l2_normalize_rows", a);
  check_finite("l2_normalize_rows", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += ad[r * cols + c] * ad[r * cols + c];
    const double nrm = std::max(std::sqrt(sq), eps);
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = ad[r * cols + c] / nrm;
  }
  return make_result("l2_normalize_rows", a.shape(), std::move(out), {a}, [rows, cols, norms](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += (g[c] - y[c] * dot) / (*norms)[r];
    }
  });
}

Tensor masked_mean_pool(const Tensor& x, std::size_t seq_len, std::span<const std::size_t> lengths) {
  require_rank2("masked_mean_pool", x);
  const std::size_t batch = lengths.size(), d = x.dim(1);
  if (batch * seq_len != x.dim(0)) shape_error("masked_mean_pool", x.shape(), {batch, seq_len});
  check_finite("masked_mean_pool", x);
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::vector<double> out(batch * d, 0.0);
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    if (lens[b] == 0 || lens[b] > seq_len) throw Error("masked_mean_pool: invalid length " + std::to_string(lens[b]));
    for (std::size_t t = 0; t < lens[b]; ++t) {
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += xd[(b * seq_len + t) * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out[b * d + c] /= static_cast<double>(lens[b]);
  }
  return make_result("masked_mean_pool", {batch, d}, std::move(out), {x}, [lens = std::move(lens), seq_len, d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t b = 0; b < lens.size(); ++b) {
      const double inv = 1.0 / static_cast<double>(lens[b]);
      for (std::size_t t = 0; t < lens[b]; ++t) {
        for (std::size_t c = 0; c < d; ++c) p.grad[(b * seq_len + t) * d + c] += self.grad[b * d + c] * inv;
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
  require_rank2("attention", q);
  require_rank2("attention", k);
  require_rank2("attention", v);
  const std::size_t B = layout.batch, tq = layout.query_len, tk = layout.key_len, H = layout.heads;
  const std::size_t d = q.dim(1);
  if (q.dim(0) != B * tq) shape_error("attention", q.shape(), {B, tq});
  if (k.dim(0) != B * tk || k.dim(1) != d) shape_error("attention", q.shape(), k.shape());
  if (v.shape() != k.shape()) shape_error("attention", k.shape(), v.shape());
  if (H == 0 || d % H != 0) throw Error("attention: width " + std::to_string(d) + " not divisible by heads");
  if (layout.key_lengths.size() != B) throw Error("attention: key_lengths size mismatch");
  check_finite("attention", q);
  check_finite("attention", k);
  check_finite("attention", v);
  const std::size_t dh = d / H;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<double>>(B * H * tq * tk, 0.0);
  std::vector<double> out(B * tq * d, 0.0);
  const Stride sd(static_cast<Eigen::Index>(d));
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  MatR scores(tq, tk);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t klen = std::min(layout.key_lengths[b], tk);
    for (std::size_t h = 0; h < H; ++h) {
      ConstStrided Q(qd + b * tq * d + h * dh, tq, dh, sd);
      ConstStrided K(kd + b * tk * d + h * dh, tk, dh, sd);
      ConstStrided V(vd + b * tk * d + h * dh, tk, dh, sd);
      scores.noalias() = (Q * K.transpose()) * inv_scale;
      MutMap P(probs->data() + (b * H + h) * tq * tk, tq, tk);
      for (std::size_t i = 0; i < tq; ++i) {
        const std::size_t limit = layout.causal ? std::min(klen, i + 1) : klen;
        if (limit == 0) continue;
        double mx = scores(i, 0);
        for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, scores(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < limit; ++j) total += (P(i, j) = std::exp(scores(i, j) - mx));
        for (std::size_t j = 0; j < limit; ++j) P(i, j) /= total;
      }
      MutStrided O(out.data() + b * tq * d + h * dh, tq, dh, sd);
      O.noalias() = P * V;
    }
  }
  return make_result("attention", {B * tq, d}, std::move(out), {q, k, v},
                     [B, tq, tk, H, d, dh, inv_scale, probs](Node& self) {
                       Node& pq = *self.parents[0];
                       Node& pk = *self.parents[1];
                       Node& pv = *self.parents[2];
                       if (pq.requires_grad) pq.ensure_grad();
                       if (pk.requires_grad) pk.ensure_grad();
                       if (pv.requires_grad) pv.ensure_grad();
                       const Stride sd(static_cast<Eigen::Index>(d));
                       MatR dP(tq, tk), dS(tq, tk);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t h = 0; h < H; ++h) {
                           const std::size_t qoff = b * tq * d + h * dh, koff = b * tk * d + h * dh;
                           ConstStrided G(self.grad.data() + qoff, tq, dh, sd);
                           ConstStrided Q(pq.data.data() + qoff, tq, dh, sd);
                           ConstStrided K(pk.data.data() + koff, tk, dh, sd);
                           ConstStrided V(pv.data.data() + koff, tk, dh, sd);
                           ConstMap P(probs->data() + (b * H + h) * tq * tk, tq, tk);
                           if (pv.requires_grad) {
                             MutStrided dV(pv.grad.data() + koff, tk, dh, sd);
                             dV.noalias() += P.transpose() * G;
                           }
                           if (!pq.requires_grad && !pk.requires_grad) continue;
                           dP.noalias() = G * V.transpose();
                           for (std::size_t i = 0; i < tq; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < tk; ++j) dot += dP(i, j) * P(i, j);
                             for (std::size_t j = 0; j < tk; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_scale;
                           }
                           if (pq.requires_grad) {
                             MutStrided dQ(pq.grad.data() + qoff, tq, dh, sd);
                             dQ.noalias() += dS * K;
                           }
                           if (pk.requires_grad) {
                             MutStrided dK(pk.grad.data() + koff, tk, dh, sd);
                             dK.noalias() += dS.transpose() * Q;
                           }
                         }
                       }
                     });
}

Tensor topk_softmax(const Tensor& logits, std::size_t k) {
  require_rank2("topk_softmax", logits);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (k == 0 || k > cols) {
    throw Error("topk_softmax: k=" + std::to_string(k) + " must be in [1, " + std::to_string(cols) + "]");
  }
  check_finite("topk_softmax", logits);
  const auto ld = logits.data();
  std::vector<double> out(logits.size(), 0.0);
  auto selected = std::make_shared<std::vector<std::size_t>>(rows * k);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ld.data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [x](std::size_t i, std::size_t j) { return x[i] > x[j]; });
    const double mx = x[order[0]];
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      (*selected)[r * k + s] = order[s];
      total += (out[r * cols + order[s]] = std::exp(x[order[s]] - mx));
    }
    for (std::size_t s = 0; s < k; ++s) out[r * cols + order[s]] /= total;
  }
  return make_result("topk_softmax", logits.shape(), std::move(out), {logits}, [rows, cols, k, selected](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t s = 0; s < k; ++s) {
        const std::size_t c = r * cols + (*selected)[r * k + s];
        dot += self.data[c] * self.grad[c];
      }
      for (std::size_t s = 0; s < k; ++s) {
        const std::size_t c = r * cols + (*selected)[r * k + s];
        p.grad[c] += self.data[c] * (self.grad[c] - dot);
      }
    }
  });
}

Tensor repeat_columns(const Tensor& a, std::size_t block) {
  require_rank2("repeat_columns", a);
  check_finite("repeat_columns", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1), width = cols * block;
  std::vector<double> out(rows * width);
  const auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::fill_n(out.data() + r * width + c * block, block, ad[r * cols + c]);
    }
  }
  return make_result("repeat_columns", {rows, width}, std::move(out), {a}, [rows, cols, block, width](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double* g = self.grad.data() + r * width + c * block;
        double total = 0.0;
        for (std::size_t t = 0; t < block; ++t) total += g[t];
        p.grad[r * cols + c] += total;
      }
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : parts) {
    require_rank2("concat_rows", t);
    if (t.dim(1) != cols) shape_error("concat_rows", parts[0].shape(), t.shape());
    check_finite("concat_rows", t);
    offsets.push_back(rows * cols);
    rows += t.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result("concat_rows", {rows, cols}, std::move(out), std::move(parents),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         Node& p = *self.parents[i];
                         if (!p.requires_grad) continue;
                         p.ensure_grad();
                         for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += self.grad[offsets[i] + j];
                       }
                     });
}

}  // namespace adaptlab::ad
