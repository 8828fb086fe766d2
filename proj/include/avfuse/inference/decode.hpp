// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "avfuse/model/captioner.hpp"
#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

/// Next-token log probabilities for a batch of prefixes.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  /// One row of vocab_size() log probabilities per prefix.
  virtual Tensor next_log_probs(std::span<const std::vector<int>> prefixes) const = 0;
};

/// Scores with a trained captioner conditioned on one encoded clip.
class CaptionerScorer : public StepScorer {
 public:
  CaptionerScorer(const Captioner& model, EncodedModalities encoded)
      : model_(model), encoded_(std::move(encoded)) {}
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  Tensor next_log_probs(std::span<const std::vector<int>> prefixes) const override;

 private:
  const Captioner& model_;
  EncodedModalities encoded_;
};

/// Row-wise log softmax.
Tensor log_softmax_rows(const Tensor& logits);

struct DecodeOptions {
  std::size_t max_len = 22;  // total tokens including sos and eos
  int sos = 1;
  int eos = 2;
};

struct Hypothesis {
  std::vector<int> tokens;  // starts with sos
  double log_prob = 0.0;
  bool finished = false;    // ends with eos

  std::size_t emitted() const { return tokens.size() - 1; }
};

/// Ranking score: log_prob, divided by the emitted-token count when
/// length_norm is set.
double hypothesis_score(const Hypothesis& h, bool length_norm);

/// Appends the most probable token (lowest id on ties) until eos or max_len.
Hypothesis greedy_decode(const StepScorer& scorer, const DecodeOptions& options = {});

/// Expands every live hypothesis by its `beam` best tokens, keeps the
/// global best `beam` candidates, retires finished ones to a pool, and
/// returns the best `beam` of pool and live ranked by score, ties broken by
/// lexicographically smaller tokens.
std::vector<Hypothesis> beam_search(const StepScorer& scorer, std::size_t beam,
                                    const DecodeOptions& options = {}, bool length_norm = true,
                                    std::size_t max_beam = 16);

}  // namespace avfuse
