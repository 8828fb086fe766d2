// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

/// A desk-scale captioning task with ambiguous sounds.
///
/// Every class has an object word and a caption template containing a
/// "{sound}" slot. Audio features are the class's audio prototype plus a
/// sound-variant prototype plus noise; the variant picks the word that fills
/// the slot and is carried by audio only. Visual features are the class's
/// visual prototype plus noise. Classes 2i and 2i+1 (i < n_ambiguous_pairs)
/// share one audio prototype, so telling them apart requires the visual
/// stream, while the sound word requires the audio stream.
struct SyntheticTaskSpec {
  int n_classes = 8;
  int n_ambiguous_pairs = 4;
  int feature_dim = 16;
  int audio_len = 4;
  int visual_len = 4;
  double noise_std = 0.1;
  int n_sound_variants = 3;
  int train_per_class = 24;
  int eval_per_class = 8;
  std::uint64_t seed = 0;
  /// One per class; generated from the built-in word lists when empty.
  std::vector<std::string> caption_templates;
  /// Words for the "{sound}" slot; built-in list when empty.
  std::vector<std::string> sound_words;

  /// Throws ConfigError on violated preconditions.
  void validate() const;
};

struct SyntheticExample {
  std::string id;
  int label = 0;
  int variant = 0;
  Tensor audio;   // audio_len x feature_dim
  Tensor visual;  // visual_len x feature_dim
  std::string caption;
};

struct SyntheticTask {
  SyntheticTaskSpec spec;
  std::vector<Tensor> audio_prototypes;   // per class (pair members share values)
  std::vector<Tensor> visual_prototypes;  // per class
  std::vector<Tensor> variant_prototypes;
  std::vector<SyntheticExample> train;
  std::vector<SyntheticExample> eval;
};

SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec);

/// Writes train.jsonl, eval.jsonl and features/*.avf under `dir`.
void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir);

std::string synthetic_template(int label, const SyntheticTaskSpec& spec);

}  // namespace avfuse
