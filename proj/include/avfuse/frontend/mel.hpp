// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

struct MelConfig {
  int sample_rate = 32000;
  std::size_t n_fft = 1024;  // Hann window length, power of two
  std::size_t hop = 320;
  std::size_t n_mels = 64;
  double f_min = 0.0;
  double f_max = 16000.0;
  double log_floor = 1e-10;
  std::size_t patch_frames = 4;
};

struct MelSpec {
  Tensor frames;  // T_frames x n_mels, natural-log magnitudes
  int sample_rate = 0;
  std::size_t hop = 0;
  std::size_t win = 0;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// (n_fft / 2 + 1) x n_mels matrix of triangular filters on the HTK mel
/// scale. Each triangle has unit area over frequency in Hz.
Tensor mel_filterbank(const MelConfig& cfg);

/// Centre frequency (Hz) of every mel filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

/// Magnitude STFT with a periodic Hann window over centred frames
/// (reflect padding), projected on the mel filterbank, then
/// log(max(x, log_floor)). Produces ceil(N / hop) frames.
MelSpec log_mel(std::span<const double> waveform, int sample_rate, const MelConfig& cfg = {});

/// Groups of `patch_frames` consecutive frames flattened row-major into
/// one row each; trailing frames that do not fill a patch are dropped.
Tensor patchify(const MelSpec& spec, std::size_t patch_frames = 4);
Tensor patchify(const Tensor& frames, std::size_t patch_frames = 4);

/// Inverse of patchify on the retained frames.
Tensor unpatchify(const Tensor& patches, std::size_t n_mels);

}  // namespace avfuse
