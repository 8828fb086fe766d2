// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "avfuse/numerics/autograd.hpp"

namespace avfuse {

/// Cross entropy of each logits row against (1 - eps) on the target and
/// eps / (V - 1) on every other class, averaged over rows whose target is
/// not `pad_id`. eps = 0 gives plain cross entropy.
Var label_smoothing_ce(const Var& logits, std::span<const int> targets, double eps, int pad_id = 0);

}  // namespace avfuse
