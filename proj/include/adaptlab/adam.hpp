// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace adaptlab::ad {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Adam with bias correction. Moment buffers are created lazily per parameter
/// name on the first step that sees it.
class AdamState {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  AdamState() = default;
  explicit AdamState(Options options) : options_(options) {}

  /// Applies one update to every parameter. Gradients are left in place.
  void step(const NamedTensors& params);

  std::uint64_t step_count() const { return step_; }
  const Options& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  Options options_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

void zero_grad(const NamedTensors& params);

}  // namespace adaptlab::ad
