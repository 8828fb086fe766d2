// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "avfuse/model/config.hpp"

namespace avfuse {

struct BlockCheckOptions {
  ModelConfig config;  // fusion_mode and sizes of the block under test
  std::uint64_t seed = 0;
  double step = 1e-6;
  /// Coordinates whose probes bring a confidence entry within `band` of a
  /// mask threshold are skipped; the base point is redrawn until clean.
  double band = 1e-3;
  bool exclusion = true;
  /// Coordinates sampled per group; 0 checks every coordinate.
  std::size_t coords_per_group = 24;
  std::size_t text_len = 5;
  std::size_t audio_len = 6;
  std::size_t visual_len = 4;
  /// Places one confidence entry 1e-8 above beta so that probes cross the
  /// threshold (adaptive modes only).
  bool near_threshold = false;
};

struct GroupCheck {
  std::string group;  // parameter name without the block prefix, or an input name
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

/// Finite-difference check of decoder block 0 composed with a fixed random
/// linear read-out, one entry per parameter and per input tensor.
std::vector<GroupCheck> check_decoder_block_gradients(const BlockCheckOptions& options);

}  // namespace avfuse
