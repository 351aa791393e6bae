// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace adaptlab {

enum class AdapterVariant { kStandard, kMoe };
enum class GateGranularity { kPerToken, kPerSample };

struct AdapterConfig {
  std::size_t bottleneck_dim = 128;
  Activation activation = Activation::kRelu;
  bool after_attention = true;
  bool after_ffn = true;
  AdapterVariant variant = AdapterVariant::kStandard;
  std::size_t moe_experts = 4;
  std::size_t moe_expert_dim = 32;
  std::size_t moe_top_k = 2;
  GateGranularity gate = GateGranularity::kPerToken;
  /// Apply the adapter to the normalised residual sum instead of the raw
  /// sublayer output (which is the default: sublayer -> adapter -> add & norm).
  bool after_residual_norm = false;
  double down_init_std = 1e-2;

  void validate() const;
  KeyValues to_kv() const;
  static AdapterConfig from_kv(const KeyValues& kv);
};

/// Z = W_up * act(W_down * h + b_down) + b_up + h
struct BottleneckWeights {
  ad::Tensor down_w;  // [d, m]
  ad::Tensor down_b;  // [m]
  ad::Tensor up_w;    // [m, d]
  ad::Tensor up_b;    // [d]
};

/// Experts are stored side by side: expert e owns columns
/// [e*expert_dim, (e+1)*expert_dim) of down_w/down_b, the matching rows of
/// up_w and row e of up_b.
struct MoeWeights {
  std::size_t experts = 0;
  std::size_t expert_dim = 0;
  ad::Tensor gate_w;  // [d, experts]
  ad::Tensor down_w;  // [d, experts*expert_dim]
  ad::Tensor down_b;  // [experts*expert_dim]
  ad::Tensor up_w;    // [experts*expert_dim, d]
  ad::Tensor up_b;    // [experts, d]
};

ad::Tensor adapter_forward(const BottleneckWeights& w, const ad::Tensor& h, Activation act);

/// Gate weights [N, experts]: softmax over the top_k gate logits per row
/// (lower expert index wins ties), zero elsewhere. With per-sample gating the
/// logits come from the mean of each sequence's valid rows.
ad::Tensor moe_gate_weights(const MoeWeights& w, const ad::Tensor& h, std::size_t top_k, GateGranularity gate,
                            const SequenceLayout* layout);

ad::Tensor moe_adapter_forward(const MoeWeights& w, const ad::Tensor& h, std::size_t top_k, Activation act,
                               GateGranularity gate = GateGranularity::kPerToken,
                               const SequenceLayout* layout = nullptr);

/// Strict overlay of adapters on a frozen base; owns only adapter tensors.
class AdapterBank : public ResidualHook {
 public:
  AdapterBank(AdapterConfig config, std::size_t d_model, std::vector<InsertionPoint> points, std::uint64_t seed);

  const AdapterConfig& config() const { return config_; }
  std::size_t d_model() const { return d_model_; }
  const std::vector<InsertionPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const ad::NamedTensors& parameters() const { return params_; }

  const BottleneckWeights& standard(const std::string& point_id) const;
  const MoeWeights& moe(const std::string& point_id) const;

  bool has(const InsertionPoint& point) const override;
  ad::Tensor apply(const InsertionPoint& point, const ad::Tensor& x, const SequenceLayout& layout) const override;
  bool after_residual_norm() const override { return config_.after_residual_norm; }

  Checkpoint to_checkpoint() const;
  static std::shared_ptr<AdapterBank> from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<AdapterBank> load(const std::filesystem::path& path);

 private:
  ad::Tensor add(const std::string& name, ad::Shape shape, double stddev);

  AdapterConfig config_;
  std::size_t d_model_;
  std::vector<InsertionPoint> points_;
  std::mt19937_64 rng_;
  ad::NamedTensors params_;
  std::map<std::string, BottleneckWeights> standard_;
  std::map<std::string, MoeWeights> moe_;
};

/// Insertion points implied by a config for a given model shape.
std::vector<InsertionPoint> insertion_points(const ModelConfig& model, const AdapterConfig& config);

/// Creates a bank (W_up and biases zero, W_down ~ N(0, down_init_std)) and
/// attaches it to the model. Throws when the model already has one.
std::shared_ptr<AdapterBank> inject(TransformerModel& model, const AdapterConfig& config, std::uint64_t seed);

/// Attaches a previously trained bank; checks shapes against the model.
void attach(TransformerModel& model, std::shared_ptr<AdapterBank> bank);

/// Freezes every base weight and returns the trainable view: the bank's
/// parameters followed by `extra` (task heads, if any).
ad::NamedTensors freeze_base(TransformerModel& model, const AdapterBank& bank, const ad::NamedTensors& extra = {});

/// Closed-form adapter parameter count for one insertion point.
std::uint64_t adapter_parameters_per_point(std::size_t d_model, const AdapterConfig& config);

}  // namespace adaptlab
