// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/frontend/mel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

// FFTW's planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double magnitude(std::size_t k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * static_cast<long long>(n) - 2;
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - m);
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> centers(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) /
                                    static_cast<double>(cfg.n_mels + 1));
  }
  return centers;
}

Tensor mel_filterbank(const MelConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  Tensor fb = Tensor::matrix(bins, cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double height = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(k, m) = w * height;
    }
  }
  return fb;
}

MelSpec log_mel(std::span<const double> waveform, int sample_rate, const MelConfig& cfg) {
  if (sample_rate != cfg.sample_rate) {
    throw ConfigError("log_mel: expected sample rate " + std::to_string(cfg.sample_rate) +
                      " Hz, got " + std::to_string(sample_rate));
  }
  if (waveform.empty()) throw DomainError("log_mel: empty waveform");
  if (cfg.n_fft < 2 || (cfg.n_fft & (cfg.n_fft - 1)) != 0 || cfg.hop == 0 || cfg.n_mels == 0) {
    throw ConfigError("log_mel: n_fft must be a power of two and hop, n_mels positive");
  }
  const std::size_t n = waveform.size();
  const std::size_t frames = (n + cfg.hop - 1) / cfg.hop;
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto half = static_cast<long long>(cfg.n_fft / 2);

  std::vector<double> window(cfg.n_fft);
  for (std::size_t i = 0; i < cfg.n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(cfg.n_fft));
  }
  const Tensor fb = mel_filterbank(cfg);

  MelSpec spec;
  spec.frames = Tensor::matrix(frames, cfg.n_mels);
  spec.sample_rate = sample_rate;
  spec.hop = cfg.hop;
  spec.win = cfg.n_fft;

  RealFft fft(cfg.n_fft);
  std::vector<double> mag(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const long long start = static_cast<long long>(t * cfg.hop) - half;
    double* in = fft.input();
    for (std::size_t i = 0; i < cfg.n_fft; ++i) {
      in[i] = waveform[reflect(start + static_cast<long long>(i), n)] * window[i];
    }
    fft.execute();
    for (std::size_t k = 0; k < bins; ++k) mag[k] = fft.magnitude(k);
    double* out = spec.frames.row(t);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += mag[k] * fb(k, m);
      out[m] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return spec;
}

Tensor patchify(const MelSpec& spec, std::size_t patch_frames) {
  return patchify(spec.frames, patch_frames);
}

Tensor patchify(const Tensor& frames, std::size_t patch_frames) {
  if (patch_frames == 0) throw ConfigError("patchify: patch_frames must be positive");
  const std::size_t t = frames.rows(), f = frames.cols();
  if (t < patch_frames) {
    throw DomainError("patchify: " + std::to_string(t) + " frames, need at least " +
                      std::to_string(patch_frames));
  }
  const std::size_t patches = t / patch_frames;
  std::vector<double> data(frames.storage().begin(),
                           frames.storage().begin() + static_cast<long>(patches * patch_frames * f));
  return Tensor(Shape{patches, patch_frames * f}, std::move(data));
}

Tensor unpatchify(const Tensor& patches, std::size_t n_mels) {
  if (n_mels == 0 || patches.cols() % n_mels != 0) {
    throw DimensionError("unpatchify: patch width " + std::to_string(patches.cols()) +
                         " is not a multiple of " + std::to_string(n_mels));
  }
  return patches.reshaped(Shape{patches.numel() / n_mels, n_mels});
}

}  // namespace avfuse
