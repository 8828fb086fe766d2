// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "avfuse/data/manifest.hpp"
#include "avfuse/data/synthetic.hpp"
#include "avfuse/data/text.hpp"
#include "avfuse/frontend/mel.hpp"
#include "avfuse/model/captioner.hpp"
#include "avfuse/training/trainer.hpp"

namespace avfuse {

/// One clip with its model inputs and normalised reference captions.
struct Clip {
  std::string id;
  ModalityInput input;
  Tensor mel;  // set when the audio came from a waveform
  std::vector<std::vector<std::string>> references;
};

/// Reads every record: WAV audio goes through log_mel and patchify, feature
/// files are used as patch sequences directly. Missing visual features
/// leave a zero-row visual tensor of width `visual_width`.
std::vector<Clip> load_clips(const DatasetManifest& manifest, const MelConfig& mel = {},
                             std::size_t visual_width = 0);

std::vector<Clip> clips_from_synthetic(std::span<const SyntheticExample> examples);

Vocabulary build_caption_vocabulary(std::span<const Clip> clips, int min_count = 1);

/// One example per reference caption, encoded to at most max_len tokens.
std::vector<TrainExample> make_train_examples(std::span<const Clip> clips, const Vocabulary& vocab,
                                              std::size_t max_len);

}  // namespace avfuse
