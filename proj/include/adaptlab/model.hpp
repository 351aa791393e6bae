// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/adam.hpp"
#include "adaptlab/checkpoint.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace adaptlab {

enum class Activation { kRelu, kGelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
ad::Tensor activate(const ad::Tensor& x, Activation a);

struct ModelConfig {
  std::size_t vocab_size = 2048;
  std::size_t d_model = 128;
  std::size_t n_layers_encoder = 4;
  std::size_t n_layers_decoder = 0;  // 0 = encoder-only
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 256;
  double dropout = 0.1;
  bool tie_embeddings = true;
  Activation activation = Activation::kGelu;

  void validate() const;
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
};

enum class ModelMode { kEncoderOnly, kEncoderDecoder };

/// Padded batch of token id sequences, row-major [batch x seq_len].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  static TokenBatch from_sequences(const std::vector<std::vector<int>>& sequences, int pad_id);
};

/// Which residual stream a sublayer writes to.
enum class Stack { kEncoder, kDecoder };
enum class SubLayer { kAttention, kFeedForward };

struct InsertionPoint {
  Stack stack = Stack::kEncoder;
  std::size_t layer = 0;
  SubLayer position = SubLayer::kAttention;

  /// Stable identifier, e.g. "encoder.2.ffn".
  std::string id() const;
};

struct SequenceLayout {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> lengths;
};

/// Hook applied to sublayer outputs; implemented by adapter banks.
class ResidualHook {
 public:
  virtual ~ResidualHook() = default;
  virtual bool has(const InsertionPoint& point) const = 0;
  virtual ad::Tensor apply(const InsertionPoint& point, const ad::Tensor& x, const SequenceLayout& layout) const = 0;
  /// True when the hook wraps the normalised residual sum instead of the raw
  /// sublayer output.
  virtual bool after_residual_norm() const = 0;
};

/// Per-layer hidden states; entry 0 is the embedding output.
struct LayerTrace {
  std::vector<ad::Tensor> hidden;
};

struct EncoderOutput {
  ad::Tensor states;  // [batch*seq_len, d_model]
  SequenceLayout layout;
  std::optional<LayerTrace> trace;
};

/// Transformer with learned absolute positions and post-norm sublayers.
/// Encoder-only when n_layers_decoder == 0, otherwise encoder-decoder with
/// causal self-attention and cross-attention in the decoder.
class TransformerModel {
 public:
  TransformerModel(ModelConfig config, std::uint64_t seed);
  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;
  TransformerModel(TransformerModel&&) = default;
  TransformerModel& operator=(TransformerModel&&) = default;

  /// Deep copy of the base weights (no hook attached).
  TransformerModel clone() const { return from_checkpoint(to_checkpoint()); }

  const ModelConfig& config() const { return config_; }
  ModelMode mode() const;
  const ad::NamedTensors& parameters() const { return params_; }
  ad::Tensor parameter(const std::string& name) const;

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void seed_dropout(std::uint64_t seed) { rng_.seed(seed); }

  void attach_hook(std::shared_ptr<const ResidualHook> hook);
  void detach_hook() { hook_.reset(); }
  const ResidualHook* hook() const { return hook_.get(); }

  /// Marks every base parameter as (non-)trainable.
  void set_base_trainable(bool trainable);

  EncoderOutput encode(const TokenBatch& batch, bool capture = false);
  /// Teacher-forced decoder pass; returns logits [dec.batch*dec.seq_len, vocab].
  ad::Tensor decode(const EncoderOutput& encoded, const TokenBatch& dec);
  /// Vocabulary projection of hidden states [n, d] (tied to token embeddings
  /// unless configured otherwise).
  ad::Tensor lm_logits(const ad::Tensor& hidden) const;

  Checkpoint to_checkpoint() const;
  static TransformerModel from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static TransformerModel load(const std::filesystem::path& path);

  /// Loads values for matching names; shapes must agree and every base name
  /// must be present.
  void load_parameters(const ad::NamedTensors& tensors);

 private:
  struct AttentionWeights {
    ad::Tensor q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  };
  struct NormWeights {
    ad::Tensor gamma, beta;
  };
  struct FfnWeights {
    ad::Tensor in_w, in_b, out_w, out_b;
  };
  struct EncoderLayer {
    AttentionWeights attn;
    NormWeights attn_norm;
    FfnWeights ffn;
    NormWeights ffn_norm;
  };
  struct DecoderLayer {
    AttentionWeights self_attn;
    NormWeights self_norm;
    AttentionWeights cross_attn;
    NormWeights cross_norm;
    FfnWeights ffn;
    NormWeights ffn_norm;
  };

  ad::Tensor add_param(const std::string& name, ad::Shape shape, double stddev);
  ad::Tensor add_const_param(const std::string& name, ad::Shape shape, double value);
  AttentionWeights make_attention(const std::string& prefix);
  NormWeights make_norm(const std::string& prefix);
  FfnWeights make_ffn(const std::string& prefix);
  void bind_weights();

  ad::Tensor embed(const TokenBatch& batch);
  ad::Tensor attend(const AttentionWeights& w, const ad::Tensor& queries, const ad::Tensor& keys,
                    const ad::AttentionLayout& layout);
  ad::Tensor feed_forward(const FfnWeights& w, const ad::Tensor& x);
  ad::Tensor residual(const InsertionPoint& point, const ad::Tensor& x, const ad::Tensor& sublayer,
                      const NormWeights& norm, const SequenceLayout& layout);

  ModelConfig config_;
  ad::NamedTensors params_;
  std::mt19937_64 init_rng_;
  std::mt19937_64 rng_;
  bool training_ = false;
  std::shared_ptr<const ResidualHook> hook_;

  ad::Tensor token_embedding_, position_embedding_, lm_bias_, lm_weight_;
  NormWeights embed_norm_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

/// Single-sequence convenience wrapper around TransformerModel::encode.
/// Throws when the sequence exceeds max_seq_len or contains an id outside
/// the vocabulary.
EncoderOutput encode(TransformerModel& model, std::span<const int> token_ids, bool capture);

/// Next-token logits after `prefix_ids` (which starts with BOS) for a single
/// encoded source sequence. Throws for encoder-only models.
std::vector<double> decode_step(TransformerModel& model, const EncoderOutput& encoded,
                                std::span<const int> prefix_ids);

/// Logits for every prefix position, [prefix.size() x vocab].
ad::Tensor decode_all_positions(TransformerModel& model, const EncoderOutput& encoded,
                                std::span<const int> prefix_ids);

struct ParameterReport {
  std::uint64_t base_params = 0;
  std::uint64_t adapter_params = 0;
  std::uint64_t trainable_params = 0;

  /// adapter_params / (k * base_params): adapter cost relative to keeping k
  /// separately fine-tuned monolingual copies of the base model.
  double ratio_vs_k_monolingual(std::uint64_t k) const;
};

std::uint64_t count_parameters(const ad::NamedTensors& tensors);
std::uint64_t count_trainable(const ad::NamedTensors& tensors);

ParameterReport parameter_report(const TransformerModel& model, const ad::NamedTensors* adapter_params = nullptr);

/// Closed-form base parameter count for a configuration (no allocation), used
/// for full-size accounting where materialising weights is wasteful.
std::uint64_t base_parameter_count(const ModelConfig& config);

}  // namespace adaptlab
