// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "avfuse/numerics/autograd.hpp"

namespace avfuse {

/// Builds a scalar on `tape` from the differentiable input `point`.
using ScalarFunction = std::function<Var(Tape& tape, const Var& point)>;

/// Returns true for coordinates that must not be probed, e.g. where a
/// finite-difference step would cross a piecewise-constant threshold.
using ExclusionPredicate = std::function<bool(std::size_t coordinate)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences. The error at a coordinate is
/// |analytic - numeric| / max(1, |numeric|); the maximum over probed
/// coordinates is returned. `coordinates` restricts probing to a subset
/// (empty = all).
GradcheckResult gradcheck(const ScalarFunction& f, const Tensor& point, double step,
                          const ExclusionPredicate& exclude = {},
                          std::span<const std::size_t> coordinates = {});

}  // namespace avfuse
