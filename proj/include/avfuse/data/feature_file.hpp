// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>

#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

enum class Modality { kAudio, kVisual };

/// A T x d matrix of features for one modality.
struct FeatureSequence {
  Tensor values;
  Modality modality = Modality::kAudio;
};

/// On-disk layout, little-endian throughout:
///   "AVF1" | u32 T | u32 d | u8 dtype | T*d payload values, row-major.
/// dtype 0 is IEEE-754 binary32, the only supported payload type.
inline constexpr char kFeatureMagic[4] = {'A', 'V', 'F', '1'};
inline constexpr std::size_t kFeatureHeaderBytes = 13;
inline constexpr std::uint8_t kFeatureDtypeF32 = 0;

/// Values are narrowed to binary32; non-finite or out-of-range values are
/// rejected.
void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence read_feature_file(const std::filesystem::path& path,
                                  Modality modality = Modality::kAudio);

}  // namespace avfuse
