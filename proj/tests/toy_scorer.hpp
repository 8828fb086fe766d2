// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "avfuse/inference/decode.hpp"

namespace avfuse::testing {

/// A context-dependent random language model: the next-token distribution
/// is a deterministic function of (seed, prefix).
class ToyScorer : public StepScorer {
 public:
  ToyScorer(std::size_t vocab, std::uint64_t seed, double temperature = 1.5)
      : vocab_(vocab), seed_(seed), temperature_(temperature) {}

  std::size_t vocab_size() const override { return vocab_; }

  Tensor next_log_probs(std::span<const std::vector<int>> prefixes) const override {
    Tensor logits(Shape{prefixes.size(), vocab_});
    for (std::size_t b = 0; b < prefixes.size(); ++b) {
      std::uint64_t h = seed_ * 0x9e3779b97f4a7c15ull + 1;
      for (int t : prefixes[b]) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001b3ull;
      std::mt19937_64 rng(h);
      std::normal_distribution<double> dist(0.0, temperature_);
      for (std::size_t j = 0; j < vocab_; ++j) logits(b, j) = dist(rng);
    }
    return log_softmax_rows(logits);
  }

 private:
  std::size_t vocab_;
  std::uint64_t seed_;
  double temperature_;
};

}  // namespace avfuse::testing
