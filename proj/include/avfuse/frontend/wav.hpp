// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

namespace avfuse {

struct Waveform {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 0;
};

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads a mono WAV file with the canonical 44-byte header holding 16-bit
/// PCM or 32-bit float samples.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const Waveform& wave, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace avfuse
