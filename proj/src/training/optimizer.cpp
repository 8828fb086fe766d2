// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/training/optimizer.hpp"

#include <cmath>

#include "avfuse/errors.hpp"

namespace avfuse {

AdamState adam_init(const ParameterStore& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for '" + name + "'");
    if (g.shape() != params.get(name).shape()) {
      throw DimensionError("adam_step: gradient shape of '" + name + "' differs from parameter");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.get(name);
    Tensor& m = state.m.get_mutable(name);
    Tensor& v = state.v.get_mutable(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double global_norm(const ParameterStore& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.data()) s += x * x;
  }
  return std::sqrt(s);
}

double clip_global_norm(ParameterStore& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.data()) x *= s;
    }
  }
  return norm;
}

}  // namespace avfuse
