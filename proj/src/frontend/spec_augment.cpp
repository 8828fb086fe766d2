// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/frontend/spec_augment.hpp"

#include <algorithm>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

MaskBand draw_band(std::size_t extent, std::size_t max_width, std::mt19937_64& rng) {
  const std::size_t cap = std::min(max_width, extent);
  const std::size_t width = std::uniform_int_distribution<std::size_t>(0, cap)(rng);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, extent - width)(rng);
  return {start, width};
}

}  // namespace

MaskDraw draw_masks(std::size_t frames, std::size_t bins, const SpecAugmentPolicy& policy,
                    std::mt19937_64& rng) {
  MaskDraw draw;
  for (std::size_t i = 0; i < policy.n_time_masks; ++i) {
    draw.time.push_back(draw_band(frames, policy.max_time_width, rng));
  }
  for (std::size_t i = 0; i < policy.n_freq_masks; ++i) {
    draw.freq.push_back(draw_band(bins, policy.max_freq_width, rng));
  }
  return draw;
}

Tensor apply_masks(const Tensor& spec, const MaskDraw& masks) {
  const std::size_t t = spec.rows(), f = spec.cols();
  for (const auto& b : masks.time) {
    if (b.start + b.width > t) throw DimensionError("spec_augment: time band exceeds frames");
  }
  for (const auto& b : masks.freq) {
    if (b.start + b.width > f) throw DimensionError("spec_augment: frequency band exceeds bins");
  }
  bool any = false;
  for (const auto& b : masks.time) any = any || b.width > 0;
  for (const auto& b : masks.freq) any = any || b.width > 0;
  if (!any) return spec;

  double mean = 0.0;
  for (double v : spec.data()) mean += v;
  mean /= static_cast<double>(spec.numel());
  Tensor out = spec;
  for (const auto& b : masks.time)
    for (std::size_t r = b.start; r < b.start + b.width; ++r) std::fill_n(out.row(r), f, mean);
  for (const auto& b : masks.freq)
    for (std::size_t r = 0; r < t; ++r) std::fill_n(out.row(r) + b.start, b.width, mean);
  return out;
}

Tensor spec_augment(const Tensor& spec, const SpecAugmentPolicy& policy, std::mt19937_64& rng) {
  return apply_masks(spec, draw_masks(spec.rows(), spec.cols(), policy, rng));
}

}  // namespace avfuse
