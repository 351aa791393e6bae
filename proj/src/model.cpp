// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/model.hpp"

#include <algorithm>
#include <map>

namespace adaptlab {

using ad::Tensor;

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "gelu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw Error("unknown activation '" + s + "' (expected relu or gelu)");
}

Tensor activate(const Tensor& x, Activation a) { return a == Activation::kRelu ? ad::relu(x) : ad::gelu(x); }

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (vocab_size < 4) throw Error("model config: vocab_size must be >= 4 (reserved specials)");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw Error("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                std::to_string(n_heads));
  }
  if (n_layers_encoder == 0) throw Error("model config: n_layers_encoder must be >= 1");
  if (d_ff == 0) throw Error("model config: d_ff must be >= 1");
  if (max_seq_len < 1) throw Error("model config: max_seq_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw Error("model config: dropout must lie in [0, 1)");
}

KeyValues ModelConfig::to_kv() const {
  return {{"vocab_size", std::to_string(vocab_size)},
          {"d_model", std::to_string(d_model)},
          {"n_layers_encoder", std::to_string(n_layers_encoder)},
          {"n_layers_decoder", std::to_string(n_layers_decoder)},
          {"n_heads", std::to_string(n_heads)},
          {"d_ff", std::to_string(d_ff)},
          {"max_seq_len", std::to_string(max_seq_len)},
          {"dropout", std::to_string(dropout)},
          {"tie_embeddings", tie_embeddings ? "1" : "0"},
          {"activation", to_string(activation)}};
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  std::map<std::string, std::string> m(kv.begin(), kv.end());
  auto get = [&m](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw Error("model config: missing key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = std::stoull(get("vocab_size"));
  c.d_model = std::stoull(get("d_model"));
  c.n_layers_encoder = std::stoull(get("n_layers_encoder"));
  c.n_layers_decoder = std::stoull(get("n_layers_decoder"));
  c.n_heads = std::stoull(get("n_heads"));
  c.d_ff = std::stoull(get("d_ff"));
  c.max_seq_len = std::stoull(get("max_seq_len"));
  c.dropout = std::stod(get("dropout"));
  c.tie_embeddings = get("tie_embeddings") == "1";
  c.activation = activation_from_string(get("activation"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

TokenBatch TokenBatch::from_sequences(const std::vector<std::vector<int>>& sequences, int pad_id) {
  if (sequences.empty()) throw Error("token batch: no sequences");
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw Error("token batch: empty sequence");
    b.seq_len = std::max(b.seq_len, s.size());
  }
  b.ids.assign(b.batch * b.seq_len, pad_id);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len));
    b.lengths.push_back(sequences[i].size());
  }
  return b;
}

std::string InsertionPoint::id() const {
  return std::string(stack == Stack::kEncoder ? "encoder." : "decoder.") + std::to_string(layer) +
         (position == SubLayer::kAttention ? ".attn" : ".ffn");
}

// ---------------------------------------------------------------------------
// TransformerModel

TransformerModel::TransformerModel(ModelConfig config, std::uint64_t seed)
    : config_(config), init_rng_(seed), rng_(seed ^ 0x9E3779B97F4A7C15ULL) {
  config_.validate();
  const std::size_t d = config_.d_model;
  add_param("embed.token", {config_.vocab_size, d}, 0.02);
  add_param("embed.position", {config_.max_seq_len, d}, 0.02);
  make_norm("embed.norm");
  for (std::size_t i = 0; i < config_.n_layers_encoder; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    make_attention(p + "attn");
    make_norm(p + "attn_norm");
    make_ffn(p + "ffn");
    make_norm(p + "ffn_norm");
  }
  for (std::size_t i = 0; i < config_.n_layers_decoder; ++i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    make_attention(p + "self_attn");
    make_norm(p + "self_norm");
    make_attention(p + "cross_attn");
    make_norm(p + "cross_norm");
    make_ffn(p + "ffn");
    make_norm(p + "ffn_norm");
  }
  if (!config_.tie_embeddings) add_param("lm.weight", {d, config_.vocab_size}, 0.02);
  add_const_param("lm.bias", {config_.vocab_size}, 0.0);
  bind_weights();
}

Tensor TransformerModel::add_param(const std::string& name, ad::Shape shape, double stddev) {
  Tensor t = Tensor::randn(std::move(shape), stddev, init_rng_, true);
  params_.emplace_back(name, t);
  return t;
}

Tensor TransformerModel::add_const_param(const std::string& name, ad::Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.emplace_back(name, t);
  return t;
}

TransformerModel::AttentionWeights TransformerModel::make_attention(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  AttentionWeights w;
  for (const char* part : {"q", "k", "v", "o"}) {
    add_param(prefix + "." + part + ".weight", {d, d}, 0.02);
    add_const_param(prefix + "." + part + ".bias", {d}, 0.0);
  }
  return w;
}

TransformerModel::NormWeights TransformerModel::make_norm(const std::string& prefix) {
  add_const_param(prefix + ".gamma", {config_.d_model}, 1.0);
  add_const_param(prefix + ".beta", {config_.d_model}, 0.0);
  return {};
}

TransformerModel::FfnWeights TransformerModel::make_ffn(const std::string& prefix) {
  add_param(prefix + ".in.weight", {config_.d_model, config_.d_ff}, 0.02);
  add_const_param(prefix + ".in.bias", {config_.d_ff}, 0.0);
  add_param(prefix + ".out.weight", {config_.d_ff, config_.d_model}, 0.02);
  add_const_param(prefix + ".out.bias", {config_.d_model}, 0.0);
  return {};
}

void TransformerModel::bind_weights() {
  auto attn = [this](const std::string& p) {
    return AttentionWeights{parameter(p + ".q.weight"), parameter(p + ".q.bias"), parameter(p + ".k.weight"),
                            parameter(p + ".k.bias"),   parameter(p + ".v.weight"), parameter(p + ".v.bias"),
                            parameter(p + ".o.weight"), parameter(p + ".o.bias")};
  };
  auto norm = [this](const std::string& p) { return NormWeights{parameter(p + ".gamma"), parameter(p + ".beta")}; };
  auto ffn = [this](const std::string& p) {
    return FfnWeights{parameter(p + ".in.weight"), parameter(p + ".in.bias"), parameter(p + ".out.weight"),
                      parameter(p + ".out.bias")};
  };
  token_embedding_ = parameter("embed.token");
  position_embedding_ = parameter("embed.position");
  embed_norm_ = norm("embed.norm");
  lm_bias_ = parameter("lm.bias");
  if (!config_.tie_embeddings) lm_weight_ = parameter("lm.weight");
  encoder_.clear();
  for (std::size_t i = 0; i < config_.n_layers_encoder; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    encoder_.push_back({attn(p + "attn"), norm(p + "attn_norm"), ffn(p + "ffn"), norm(p + "ffn_norm")});
  }
  decoder_.clear();
  for (std::size_t i = 0; i < config_.n_layers_decoder; ++i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    decoder_.push_back({attn(p + "self_attn"), norm(p + "self_norm"), attn(p + "cross_attn"), norm(p + "cross_norm"),
                        ffn(p + "ffn"), norm(p + "ffn_norm")});
  }
}

ModelMode TransformerModel::mode() const {
  return config_.n_layers_decoder == 0 ? ModelMode::kEncoderOnly : ModelMode::kEncoderDecoder;
}

Tensor TransformerModel::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw Error("model: no parameter named '" + name + "'");
}

void TransformerModel::attach_hook(std::shared_ptr<const ResidualHook> hook) {
  if (hook_) throw Error("model: a residual hook (adapter bank) is already attached");
  hook_ = std::move(hook);
}

void TransformerModel::set_base_trainable(bool trainable) {
  for (auto& [name, t] : params_) {
    Tensor p = t;
    p.set_requires_grad(trainable);
    if (!trainable) p.zero_grad();
  }
}

Tensor TransformerModel::embed(const TokenBatch& batch) {
  if (batch.seq_len > config_.max_seq_len) {
    throw Error("encode: sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                std::to_string(config_.max_seq_len));
  }
  if (batch.ids.size() != batch.batch * batch.seq_len || batch.lengths.size() != batch.batch) {
    throw Error("encode: malformed token batch");
  }
  for (int id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw Error("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                  std::to_string(config_.vocab_size));
    }
  }
  std::vector<int> positions(batch.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq_len);
  Tensor x = ad::add(ad::embedding(token_embedding_, batch.ids), ad::embedding(position_embedding_, positions));
  x = ad::layer_norm(x, embed_norm_.gamma, embed_norm_.beta);
  return ad::dropout(x, config_.dropout, training_, rng_);
}

Tensor TransformerModel::attend(const AttentionWeights& w, const Tensor& queries, const Tensor& keys,
                                const ad::AttentionLayout& layout) {
  Tensor q = ad::add(ad::matmul(queries, w.q_w), w.q_b);
  Tensor k = ad::add(ad::matmul(keys, w.k_w), w.k_b);
  Tensor v = ad::add(ad::matmul(keys, w.v_w), w.v_b);
  Tensor ctx = ad::attention(q, k, v, layout);
  return ad::add(ad::matmul(ctx, w.o_w), w.o_b);
}

Tensor TransformerModel::feed_forward(const FfnWeights& w, const Tensor& x) {
  Tensor h = activate(ad::add(ad::matmul(x, w.in_w), w.in_b), config_.activation);
  return ad::add(ad::matmul(h, w.out_w), w.out_b);
}

Tensor TransformerModel::residual(const InsertionPoint& point, const Tensor& x, const Tensor& sublayer,
                                  const NormWeights& norm, const SequenceLayout& layout) {
  Tensor s = ad::dropout(sublayer, config_.dropout, training_, rng_);
  const bool hooked = hook_ && hook_->has(point);
  if (hooked && !hook_->after_residual_norm()) s = hook_->apply(point, s, layout);
  Tensor y = ad::layer_norm(ad::add(x, s), norm.gamma, norm.beta);
  if (hooked && hook_->after_residual_norm()) y = hook_->apply(point, y, layout);
  return y;
}

EncoderOutput TransformerModel::encode(const TokenBatch& batch, bool capture) {
  EncoderOutput out;
  out.layout = {batch.batch, batch.seq_len, batch.lengths};
  Tensor x = embed(batch);
  if (capture) out.trace.emplace().hidden.push_back(x);
  ad::AttentionLayout layout{batch.batch, batch.seq_len, batch.seq_len, config_.n_heads, false, batch.lengths};
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const auto& layer = encoder_[i];
    x = residual({Stack::kEncoder, i, SubLayer::kAttention}, x, attend(layer.attn, x, x, layout), layer.attn_norm,
                 out.layout);
    x = residual({Stack::kEncoder, i, SubLayer::kFeedForward}, x, feed_forward(layer.ffn, x), layer.ffn_norm,
                 out.layout);
    if (capture) out.trace->hidden.push_back(x);
  }
  out.states = x;
  return out;
}

Tensor TransformerModel::decode(const EncoderOutput& encoded, const TokenBatch& dec) {
  if (mode() != ModelMode::kEncoderDecoder) throw Error("decode: model is encoder-only");
  if (dec.batch != encoded.layout.batch) throw Error("decode: decoder batch does not match encoder batch");
  Tensor x = embed(dec);
  const SequenceLayout dec_layout{dec.batch, dec.seq_len, dec.lengths};
  ad::AttentionLayout self_layout{dec.batch, dec.seq_len, dec.seq_len, config_.n_heads, true, dec.lengths};
  ad::AttentionLayout cross_layout{dec.batch, dec.seq_len, encoded.layout.seq_len, config_.n_heads, false,
                                   encoded.layout.lengths};
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto& layer = decoder_[i];
    x = residual({Stack::kDecoder, i, SubLayer::kAttention}, x, attend(layer.self_attn, x, x, self_layout),
                 layer.self_norm, dec_layout);
    // Cross-attention carries no adapter.
    Tensor c = ad::dropout(attend(layer.cross_attn, x, encoded.states, cross_layout), config_.dropout, training_, rng_);
    x = ad::layer_norm(ad::add(x, c), layer.cross_norm.gamma, layer.cross_norm.beta);
    x = residual({Stack::kDecoder, i, SubLayer::kFeedForward}, x, feed_forward(layer.ffn, x), layer.ffn_norm,
                 dec_layout);
  }
  return lm_logits(x);
}

Tensor TransformerModel::lm_logits(const Tensor& hidden) const {
  Tensor proj = config_.tie_embeddings ? ad::transpose(token_embedding_) : lm_weight_;
  return ad::add(ad::matmul(hidden, proj), lm_bias_);
}

Checkpoint TransformerModel::to_checkpoint() const {
  Checkpoint c;
  c.meta = config_.to_kv();
  c.meta.emplace_back("kind", "model");
  c.tensors = params_;
  return c;
}

TransformerModel TransformerModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.has_meta("kind") && ckpt.meta_value("kind") != "model") {
    throw Error("checkpoint: expected a model checkpoint, found '" + ckpt.meta_value("kind") + "'");
  }
  KeyValues kv;
  for (const auto& e : ckpt.meta) {
    if (e.first != "kind") kv.push_back(e);
  }
  TransformerModel model(ModelConfig::from_kv(kv), 0);
  model.load_parameters(ckpt.tensors);
  return model;
}

void TransformerModel::save(const std::filesystem::path& path) const { write_checkpoint(path, to_checkpoint()); }

TransformerModel TransformerModel::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("checkpoint not found: " + path.string());
  return from_checkpoint(read_checkpoint(path));
}

void TransformerModel::load_parameters(const ad::NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : tensors) by_name[n] = &t;
  for (auto& [name, param] : params_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape() != param.shape()) {
      throw Error("checkpoint: parameter '" + name + "' has shape " + ad::shape_str(it->second->shape()) +
                  ", expected " + ad::shape_str(param.shape()));
    }
    Tensor p = param;
    std::copy(it->second->data().begin(), it->second->data().end(), p.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------

EncoderOutput encode(TransformerModel& model, std::span<const int> token_ids, bool capture) {
  if (token_ids.empty()) throw Error("encode: empty sequence");
  return model.encode(TokenBatch::from_sequences({{token_ids.begin(), token_ids.end()}}, 0), capture);
}

Tensor decode_all_positions(TransformerModel& model, const EncoderOutput& encoded, std::span<const int> prefix_ids) {
  if (model.mode() != ModelMode::kEncoderDecoder) throw Error("decode_step: model is encoder-only");
  if (encoded.layout.batch != 1) throw Error("decode_step: expects a single encoded sequence");
  if (prefix_ids.empty()) throw Error("decode_step: prefix must contain at least BOS");
  return model.decode(encoded, TokenBatch::from_sequences({{prefix_ids.begin(), prefix_ids.end()}}, 0));
}

std::vector<double> decode_step(TransformerModel& model, const EncoderOutput& encoded, std::span<const int> prefix_ids) {
  Tensor logits = decode_all_positions(model, encoded, prefix_ids);
  const std::size_t v = logits.dim(1);
  const auto data = logits.data();
  return {data.end() - static_cast<std::ptrdiff_t>(v), data.end()};
}

// ---------------------------------------------------------------------------

std::uint64_t count_parameters(const ad::NamedTensors& tensors) {
  std::uint64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

std::uint64_t count_trainable(const ad::NamedTensors& tensors) {
  std::uint64_t n = 0;
  for (const auto& [name, t] : tensors) {
    if (t.requires_grad()) n += t.size();
  }
  return n;
}

double ParameterReport::ratio_vs_k_monolingual(std::uint64_t k) const {
  if (k == 0 || base_params == 0) throw Error("parameter report: k and base_params must be positive");
  return static_cast<double>(adapter_params) / (static_cast<double>(k) * static_cast<double>(base_params));
}

ParameterReport parameter_report(const TransformerModel& model, const ad::NamedTensors* adapter_params) {
  ParameterReport r;
  r.base_params = count_parameters(model.parameters());
  r.trainable_params = count_trainable(model.parameters());
  if (adapter_params) {
    r.adapter_params = count_parameters(*adapter_params);
    r.trainable_params += count_trainable(*adapter_params);
  }
  return r;
}

std::uint64_t base_parameter_count(const ModelConfig& c) {
  const std::uint64_t d = c.d_model, ff = c.d_ff, v = c.vocab_size;
  const std::uint64_t attention = 4 * (d * d + d);
  const std::uint64_t norm = 2 * d;
  const std::uint64_t ffn = d * ff + ff + ff * d + d;
  std::uint64_t total = v * d + c.max_seq_len * d + norm;
  total += c.n_layers_encoder * (attention + norm + ffn + norm);
  total += c.n_layers_decoder * (2 * attention + 3 * norm + ffn);
  if (!c.tie_embeddings) total += d * v;
  total += v;
  return total;
}

}  // namespace adaptlab
