// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference oracle shared by the test binaries. Independent of the
// tape: it only perturbs values and re-evaluates the forward function.

#pragma once

#include "adaptlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace adaptlab::testing {

/// Central differences of scalar f with respect to every element of `input`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, ad::Tensor& input, double h = 1e-5) {
  auto values = input.mutable_data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = f();
    values[i] = saved - h;
    const double minus = f();
    values[i] = saved;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

/// Largest elementwise relative error between the tape gradient of `root_fn`
/// and finite differences, over all `inputs`.
inline double max_gradient_error(const std::function<ad::Tensor()>& root_fn, std::vector<ad::Tensor> inputs) {
  for (auto& t : inputs) t.zero_grad();
  root_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  double worst = 0.0;
  ad::NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto numeric = numeric_gradient([&] { return root_fn().item(); }, inputs[k]);
    for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, relative_error(analytic[k][i], numeric[i]));
  }
  return worst;
}

}  // namespace adaptlab::testing
