// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

struct SpecAugmentPolicy {
  std::size_t n_time_masks = 2;
  std::size_t max_time_width = 64;  // frames
  std::size_t n_freq_masks = 2;
  std::size_t max_freq_width = 8;   // mel bins

  friend bool operator==(const SpecAugmentPolicy&, const SpecAugmentPolicy&) = default;
};

struct MaskBand {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct MaskDraw {
  std::vector<MaskBand> time;
  std::vector<MaskBand> freq;
};

/// Draws band widths uniformly in [0, max width] (clamped to the axis
/// length) and starts uniformly among the positions where the band fits.
MaskDraw draw_masks(std::size_t frames, std::size_t bins, const SpecAugmentPolicy& policy,
                    std::mt19937_64& rng);

/// Sets every cell covered by a time band (all bins) or a frequency band
/// (all frames) to the mean of the input. Other cells are copied unchanged.
Tensor apply_masks(const Tensor& spec, const MaskDraw& masks);

/// draw_masks followed by apply_masks. Shape never changes.
Tensor spec_augment(const Tensor& spec, const SpecAugmentPolicy& policy, std::mt19937_64& rng);

}  // namespace avfuse
