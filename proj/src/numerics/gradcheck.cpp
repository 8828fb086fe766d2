// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/numerics/gradcheck.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& point, std::size_t coordinate) {
  Tape tape;
  const Var x = tape.constant(point);
  double value = 0.0;
  try {
    value = f(tape, x).value().item();
  } catch (const NumericalError& e) {
    throw NumericalError("gradcheck: non-finite value while probing coordinate " +
                         std::to_string(coordinate) + ": " + e.what());
  }
  if (!std::isfinite(value)) {
    throw NumericalError("gradcheck: non-finite value while probing coordinate " +
                         std::to_string(coordinate));
  }
  return value;
}

}  // namespace

GradcheckResult gradcheck(const ScalarFunction& f, const Tensor& point, double step,
                          const ExclusionPredicate& exclude,
                          std::span<const std::size_t> coordinates) {
  if (!(step > 0.0 && step <= 1e-2)) {
    throw DomainError("gradcheck: step must lie in (0, 1e-2], got " + std::to_string(step));
  }
  Tensor analytic;
  {
    Tape tape;
    const Var x = tape.leaf(point, true);
    const Var y = f(tape, x);
    analytic = tape.backward(y).of(x);
  }

  std::vector<std::size_t> all;
  if (coordinates.empty()) {
    all.resize(point.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coordinates = all;
  }

  GradcheckResult result;
  Tensor probe = point;
  for (std::size_t c : coordinates) {
    if (c >= point.numel()) throw DimensionError("gradcheck: coordinate out of range");
    if (exclude && exclude(c)) {
      ++result.excluded;
      continue;
    }
    const double orig = probe[c];
    probe[c] = orig + step;
    const double up = evaluate(f, probe, c);
    probe[c] = orig - step;
    const double down = evaluate(f, probe, c);
    probe[c] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst_coordinate = c;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace avfuse
