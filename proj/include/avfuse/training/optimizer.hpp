// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "avfuse/model/params.hpp"

namespace avfuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  ParameterStore m;
  ParameterStore v;
  std::uint64_t step = 0;  // completed updates
};

AdamState adam_init(const ParameterStore& params);

/// One bias-corrected Adam update. Throws NumericalError naming the first
/// parameter with a non-finite gradient, before changing anything.
void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

/// L2 norm over every gradient entry.
double global_norm(const ParameterStore& grads);
/// Scales all gradients by max_norm / norm when norm exceeds max_norm.
/// Returns the norm before clipping.
double clip_global_norm(ParameterStore& grads, double max_norm);

}  // namespace avfuse
