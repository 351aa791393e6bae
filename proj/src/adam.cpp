// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/adam.hpp"

#include <cmath>

namespace adaptlab::ad {

void AdamState::step(const NamedTensors& params) {
  for (const auto& [name, tensor] : params) {
    if (!tensor.has_grad()) throw Error("adam_step: parameter '" + name + "' has no gradient");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  for (const auto& [name, tensor] : params) {
    Tensor param = tensor;
    auto values = param.mutable_data();
    auto grads = param.grad();
    Moments& m = moments_[name];
    if (m.first.size() != values.size()) {
      m.first.assign(values.size(), 0.0);
      m.second.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m.first[i] = options_.beta1 * m.first[i] + (1.0 - options_.beta1) * g;
      m.second[i] = options_.beta2 * m.second[i] + (1.0 - options_.beta2) * g * g;
      const double mhat = m.first[i] / correction1;
      const double vhat = m.second[i] / correction2;
      values[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

void zero_grad(const NamedTensors& params) {
  for (const auto& [name, tensor] : params) {
    Tensor t = tensor;
    t.zero_grad();
  }
}

}  // namespace adaptlab::ad
