// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/adapter.hpp"

namespace adaptlab {

using ad::Tensor;

void AdapterConfig::validate() const {
  if (bottleneck_dim < 1) throw Error("adapter config: bottleneck_dim must be >= 1");
  if (!after_attention && !after_ffn) throw Error("adapter config: no insertion point selected");
  if (variant == AdapterVariant::kMoe) {
    if (moe_experts < 1 || moe_expert_dim < 1) throw Error("adapter config: moe_experts and moe_expert_dim must be >= 1");
    if (moe_top_k < 1 || moe_top_k > moe_experts) {
      throw Error("adapter config: moe_top_k " + std::to_string(moe_top_k) + " must lie in [1, " +
                  std::to_string(moe_experts) + "]");
    }
  }
  if (down_init_std < 0.0) throw Error("adapter config: down_init_std must be >= 0");
}

KeyValues AdapterConfig::to_kv() const {
  return {{"bottleneck_dim", std::to_string(bottleneck_dim)},
          {"activation", to_string(activation)},
          {"after_attention", after_attention ? "1" : "0"},
          {"after_ffn", after_ffn ? "1" : "0"},
          {"variant", variant == AdapterVariant::kMoe ? "moe" : "standard"},
          {"moe_experts", std::to_string(moe_experts)},
          {"moe_expert_dim", std::to_string(moe_expert_dim)},
          {"moe_top_k", std::to_string(moe_top_k)},
          {"gate", gate == GateGranularity::kPerSample ? "per_sample" : "per_token"},
          {"after_residual_norm", after_residual_norm ? "1" : "0"},
          {"down_init_std", std::to_string(down_init_std)}};
}

AdapterConfig AdapterConfig::from_kv(const KeyValues& kv) {
  std::map<std::string, std::string> m(kv.begin(), kv.end());
  auto get = [&m](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw Error("adapter config: missing key '" + key + "'");
    return it->second;
  };
  AdapterConfig c;
  c.bottleneck_dim = std::stoull(get("bottleneck_dim"));
  c.activation = activation_from_string(get("activation"));
  c.after_attention = get("after_attention") == "1";
  c.after_ffn = get("after_ffn") == "1";
  c.variant = get("variant") == "moe" ? AdapterVariant::kMoe : AdapterVariant::kStandard;
  c.moe_experts = std::stoull(get("moe_experts"));
  c.moe_expert_dim = std::stoull(get("moe_expert_dim"));
  c.moe_top_k = std::stoull(get("moe_top_k"));
  c.gate = get("gate") == "per_sample" ? GateGranularity::kPerSample : GateGranularity::kPerToken;
  c.after_residual_norm = get("after_residual_norm") == "1";
  c.down_init_std = std::stod(get("down_init_std"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Tensor adapter_forward(const BottleneckWeights& w, const Tensor& h, Activation act) {
  if (h.rank() != 2 || h.dim(1) != w.down_w.dim(0)) {
    throw Error("adapter_forward: input " + ad::shape_str(h.shape()) + " does not match adapter width " +
                std::to_string(w.down_w.dim(0)));
  }
  Tensor z = activate(ad::add(ad::matmul(h, w.down_w), w.down_b), act);
  return ad::add(ad::add(ad::matmul(z, w.up_w), w.up_b), h);
}

Tensor moe_gate_weights(const MoeWeights& w, const Tensor& h, std::size_t top_k, GateGranularity gate,
                        const SequenceLayout* layout) {
  if (top_k < 1 || top_k > w.experts) {
    throw Error("moe_adapter_forward: top_k " + std::to_string(top_k) + " exceeds " + std::to_string(w.experts) +
                " experts");
  }
  if (gate == GateGranularity::kPerToken) return ad::topk_softmax(ad::matmul(h, w.gate_w), top_k);
  if (!layout) throw Error("moe_adapter_forward: per-sample gating needs a sequence layout");
  Tensor pooled = ad::masked_mean_pool(h, layout->seq_len, layout->lengths);
  Tensor per_sample = ad::topk_softmax(ad::matmul(pooled, w.gate_w), top_k);
  std::vector<int> rows(layout->batch * layout->seq_len);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i / layout->seq_len);
  return ad::embedding(per_sample, rows);
}

Tensor moe_adapter_forward(const MoeWeights& w, const Tensor& h, std::size_t top_k, Activation act,
                           GateGranularity gate, const SequenceLayout* layout) {
  if (h.rank() != 2 || h.dim(1) != w.gate_w.dim(0)) {
    throw Error("moe_adapter_forward: input " + ad::shape_str(h.shape()) + " does not match adapter width " +
                std::to_string(w.gate_w.dim(0)));
  }
  Tensor weights = moe_gate_weights(w, h, top_k, gate, layout);
  Tensor z = activate(ad::add(ad::matmul(h, w.down_w), w.down_b), act);
  // Scaling each expert's bottleneck activations by its gate weight before the
  // shared up-projection gives sum_e w_e * W_up_e z_e; unselected experts see
  // an exact zero and therefore receive exactly zero gradient.
  Tensor mixed = ad::mul(z, ad::repeat_columns(weights, w.expert_dim));
  Tensor out = ad::add(ad::matmul(mixed, w.up_w), ad::matmul(weights, w.up_b));
  return ad::add(out, h);
}

// ---------------------------------------------------------------------------

std::vector<InsertionPoint> insertion_points(const ModelConfig& model, const AdapterConfig& config) {
  std::vector<InsertionPoint> points;
  auto add_stack = [&](Stack stack, std::size_t layers) {
    for (std::size_t i = 0; i < layers; ++i) {
      if (config.after_attention) points.push_back({stack, i, SubLayer::kAttention});
      if (config.after_ffn) points.push_back({stack, i, SubLayer::kFeedForward});
    }
  };
  add_stack(Stack::kEncoder, model.n_layers_encoder);
  add_stack(Stack::kDecoder, model.n_layers_decoder);
  return points;
}

AdapterBank::AdapterBank(AdapterConfig config, std::size_t d_model, std::vector<InsertionPoint> points,
                         std::uint64_t seed)
    : config_(config), d_model_(d_model), points_(std::move(points)), rng_(seed) {
  config_.validate();
  const std::size_t d = d_model_;
  for (const auto& p : points_) {
    const std::string base = "adapter." + p.id();
    if (config_.variant == AdapterVariant::kStandard) {
      const std::size_t m = config_.bottleneck_dim;
      BottleneckWeights w;
      w.down_w = add(base + ".down.weight", {d, m}, config_.down_init_std);
      w.down_b = add(base + ".down.bias", {m}, 0.0);
      w.up_w = add(base + ".up.weight", {m, d}, 0.0);
      w.up_b = add(base + ".up.bias", {d}, 0.0);
      standard_.emplace(p.id(), w);
    } else {
      const std::size_t e = config_.moe_experts, m = config_.moe_expert_dim;
      MoeWeights w;
      w.experts = e;
      w.expert_dim = m;
      w.gate_w = add(base + ".gate.weight", {d, e}, config_.down_init_std);
      w.down_w = add(base + ".down.weight", {d, e * m}, config_.down_init_std);
      w.down_b = add(base + ".down.bias", {e * m}, 0.0);
      w.up_w = add(base + ".up.weight", {e * m, d}, 0.0);
      w.up_b = add(base + ".up.bias", {e, d}, 0.0);
      moe_.emplace(p.id(), w);
    }
  }
}

Tensor AdapterBank::add(const std::string& name, ad::Shape shape, double stddev) {
  Tensor t = stddev > 0.0 ? Tensor::randn(std::move(shape), stddev, rng_, true) : Tensor::zeros(std::move(shape), true);
  params_.emplace_back(name, t);
  return t;
}

const BottleneckWeights& AdapterBank::standard(const std::string& point_id) const {
  auto it = standard_.find(point_id);
  if (it == standard_.end()) throw Error("adapter bank: no standard adapter at '" + point_id + "'");
  return it->second;
}

const MoeWeights& AdapterBank::moe(const std::string& point_id) const {
  auto it = moe_.find(point_id);
  if (it == moe_.end()) throw Error("adapter bank: no MoE adapter at '" + point_id + "'");
  return it->second;
}

bool AdapterBank::has(const InsertionPoint& point) const {
  const std::string id = point.id();
  return standard_.count(id) > 0 || moe_.count(id) > 0;
}

Tensor AdapterBank::apply(const InsertionPoint& point, const Tensor& x, const SequenceLayout& layout) const {
  const std::string id = point.id();
  if (config_.variant == AdapterVariant::kStandard) return adapter_forward(standard(id), x, config_.activation);
  return moe_adapter_forward(moe(id), x, config_.moe_top_k, config_.activation, config_.gate, &layout);
}

Checkpoint AdapterBank::to_checkpoint() const {
  Checkpoint c;
  c.meta = config_.to_kv();
  c.meta.emplace_back("kind", "adapter");
  c.meta.emplace_back("d_model", std::to_string(d_model_));
  std::string ids;
  for (const auto& p : points_) ids += (ids.empty() ? "" : ",") + p.id();
  c.meta.emplace_back("points", ids);
  c.tensors = params_;
  return c;
}

namespace {

InsertionPoint parse_point(const std::string& id) {
  const auto first = id.find('.');
  const auto last = id.rfind('.');
  if (first == std::string::npos || first == last) throw Error("adapter checkpoint: bad insertion point '" + id + "'");
  InsertionPoint p;
  const std::string stack = id.substr(0, first);
  const std::string pos = id.substr(last + 1);
  if (stack != "encoder" && stack != "decoder") throw Error("adapter checkpoint: bad insertion point '" + id + "'");
  if (pos != "attn" && pos != "ffn") throw Error("adapter checkpoint: bad insertion point '" + id + "'");
  p.stack = stack == "encoder" ? Stack::kEncoder : Stack::kDecoder;
  p.layer = std::stoull(id.substr(first + 1, last - first - 1));
  p.position = pos == "attn" ? SubLayer::kAttention : SubLayer::kFeedForward;
  return p;
}

}  // namespace

std::shared_ptr<AdapterBank> AdapterBank::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("kind") || ckpt.meta_value("kind") != "adapter") {
    throw Error("checkpoint: expected an adapter checkpoint");
  }
  KeyValues kv;
  for (const auto& e : ckpt.meta) {
    if (e.first != "kind" && e.first != "d_model" && e.first != "points") kv.push_back(e);
  }
  std::vector<InsertionPoint> points;
  const std::string& ids = ckpt.meta_value("points");
  std::size_t start = 0;
  while (start <= ids.size() && !ids.empty()) {
    const auto comma = ids.find(',', start);
    points.push_back(parse_point(ids.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  auto bank = std::make_shared<AdapterBank>(AdapterConfig::from_kv(kv), std::stoull(ckpt.meta_value("d_model")),
                                            std::move(points), 0);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : ckpt.tensors) by_name[n] = &t;
  for (auto& [name, param] : bank->params_) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->shape() != param.shape()) {
      throw Error("adapter checkpoint: missing or mis-shaped tensor '" + name + "'");
    }
    Tensor p = param;
    std::copy(it->second->data().begin(), it->second->data().end(), p.mutable_data().begin());
  }
  return bank;
}

void AdapterBank::save(const std::filesystem::path& path) const { write_checkpoint(path, to_checkpoint()); }

std::shared_ptr<AdapterBank> AdapterBank::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("adapter checkpoint not found: " + path.string());
  return from_checkpoint(read_checkpoint(path));
}

std::shared_ptr<AdapterBank> inject(TransformerModel& model, const AdapterConfig& config, std::uint64_t seed) {
  if (model.hook()) throw Error("inject: model already has an adapter bank attached");
  auto bank =
      std::make_shared<AdapterBank>(config, model.config().d_model, insertion_points(model.config(), config), seed);
  model.attach_hook(bank);
  return bank;
}

void attach(TransformerModel& model, std::shared_ptr<AdapterBank> bank) {
  if (bank->d_model() != model.config().d_model) throw Error("attach: adapter width does not match model d_model");
  for (const auto& p : bank->points()) {
    const std::size_t layers = p.stack == Stack::kEncoder ? model.config().n_layers_encoder : model.config().n_layers_decoder;
    if (p.layer >= layers) throw Error("attach: insertion point '" + p.id() + "' does not exist in this model");
  }
  model.attach_hook(std::move(bank));
}

ad::NamedTensors freeze_base(TransformerModel& model, const AdapterBank& bank, const ad::NamedTensors& extra) {
  model.set_base_trainable(false);
  ad::NamedTensors view = bank.parameters();
  view.insert(view.end(), extra.begin(), extra.end());
  for (auto& [name, t] : view) {
    Tensor p = t;
    p.set_requires_grad(true);
  }
  return view;
}

std::uint64_t adapter_parameters_per_point(std::size_t d_model, const AdapterConfig& config) {
  const std::uint64_t d = d_model;
  if (config.variant == AdapterVariant::kStandard) {
    const std::uint64_t m = config.bottleneck_dim;
    return 2 * d * m + m + d;
  }
  const std::uint64_t e = config.moe_experts, m = config.moe_expert_dim;
  return e * (2 * d * m + m + d) + d * e;
}

}  // namespace adaptlab
