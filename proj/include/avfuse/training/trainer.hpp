// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avfuse/data/text.hpp"
#include "avfuse/frontend/spec_augment.hpp"
#include "avfuse/model/captioner.hpp"
#include "avfuse/model/checkpoint.hpp"
#include "avfuse/training/optimizer.hpp"
#include "json.hpp"

namespace avfuse {

struct TrainConfig {
  double lr_peak = 1e-4;
  std::size_t epochs = 15;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 32;
  double label_smoothing = 0.1;
  AdamConfig adam;
  double grad_clip = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 1;  // epochs
  bool spec_augment = true;
  SpecAugmentPolicy augment;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear ramp from 0 over warmup_epochs * steps_per_epoch steps, then lr_peak.
double lr_at(std::uint64_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

/// One training clip. `mel` (frames x n_mels) is set for waveform-derived
/// audio; when present and augmentation is on, patches are rebuilt from a
/// SpecAugment-ed copy each time the clip is drawn.
struct TrainExample {
  ModalityInput input;
  Tensor mel;
  std::vector<int> tokens;  // sos ... eos, unpadded
};

struct TrainState {
  std::uint64_t step = 0;
  std::size_t epoch = 0;  // completed epochs
  AdamState adam;
  std::string data_rng;
  std::string augment_rng;
  std::string dropout_rng;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  bool has_best = false;
};

struct MetricsRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;  // present on the last step of an epoch

  nlohmann::json to_json() const;
  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct FitOptions {
  /// When set, last.avck and best.avck are written here at checkpoint epochs.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// When set, one JSON record per step is appended.
  std::optional<std::filesystem::path> metrics_log;
  /// Stop after this many completed epochs (for interrupted-run tests).
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const MetricsRecord&)> on_step;
};

struct FitResult {
  TrainState state;
  std::vector<MetricsRecord> log;
};

/// Fresh optimiser state and RNG streams derived from cfg.seed.
TrainState initial_train_state(const Captioner& model, const TrainConfig& cfg);

/// Seeded shuffle, batches, optional SpecAugment, teacher-forced forward,
/// loss, backward, clipping and Adam with the warmup schedule; validation
/// loss after every epoch. Continues from `state` (use initial_train_state
/// for a fresh run). Deterministic given the inputs.
FitResult fit(Captioner& model, const Vocabulary& vocab, std::span<const TrainExample> train,
              std::span<const TrainExample> val, const TrainConfig& cfg, TrainState state,
              const FitOptions& options = {});

/// Mean label-smoothed loss over every non-pad target position, no dropout.
double evaluate_loss(const Captioner& model, std::span<const TrainExample> examples, double eps,
                     std::size_t batch_size = 32);

struct TrainingCheckpoint {
  ModelBundle bundle;
  TrainConfig config;
  TrainState state;
};

void save_training_checkpoint(const Captioner& model, const Vocabulary& vocab, const TrainConfig& cfg,
                              const TrainState& state, const std::filesystem::path& path);
TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& path);

}  // namespace avfuse
