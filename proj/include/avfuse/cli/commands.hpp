// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "avfuse/data/synthetic.hpp"
#include "avfuse/metrics/metrics.hpp"
#include "avfuse/model/config.hpp"
#include "avfuse/training/trainer.hpp"
#include "json.hpp"

namespace avfuse::cli {

/// Model and training settings plus the paths a run touches.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_log;  // defaults to <checkpoint_dir>/metrics.jsonl
  std::filesystem::path report_path;  // defaults to <checkpoint_dir>/report.json
  /// Model keys given explicitly; audio_in_dim, visual_in_dim and
  /// max_audio_len are taken from the data when absent.
  std::vector<std::string> explicit_model_keys;
  /// Flag overrides in the order applied, as "key=value".
  std::vector<std::string> overrides;

  nlohmann::json to_json() const;
};

/// One dotted-key override, e.g. {"model.beta", 0.2}.
using Override = std::pair<std::string, nlohmann::json>;

/// Parses "key=value"; the value is read as JSON and falls back to a string.
Override parse_override(const std::string& text);

/// File values first, then overrides in order. Relative paths in the file
/// resolve against the file's directory. Unknown keys are rejected with
/// ConfigError listing all of them.
RunConfig resolve_run_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<Override>& overrides);

/// Exclusive ownership of a directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Worker count from AVFUSE_THREADS (default: hardware concurrency, >= 1).
std::size_t worker_count();

struct SynthOptions {
  std::filesystem::path out_dir;
  bool force = false;
  SyntheticTaskSpec spec;
};
void cmd_synth(const SynthOptions& options, std::ostream& out);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::vector<Override> overrides;
  bool resume = false;
  std::optional<std::size_t> stop_after_epoch;
  bool quiet = false;
};
/// Returns the final training state.
TrainState cmd_train(const TrainOptions& options, std::ostream& out);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::size_t beam = 3;
  bool greedy = false;
  std::optional<std::filesystem::path> report;
  std::optional<std::filesystem::path> candidates;
  /// When set, the model section must agree with the checkpoint.
  std::optional<std::filesystem::path> config;
  std::vector<Override> overrides;
};
MetricReport cmd_eval(const EvalOptions& options, std::ostream& out);

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path audio;
  std::optional<std::filesystem::path> visual;
  std::size_t beam = 3;
  bool trace = false;
};
/// Returns the decoded caption.
std::string cmd_infer(const InferOptions& options, std::ostream& out);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  bool exclusion = true;
  bool near_threshold = false;
  std::string fusion_mode = "adaava_audio";
  double threshold = 1e-4;
};
/// Returns true when every group stays below the threshold.
bool cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

/// Full command-line entry point; returns the process exit code
/// (0 success, 1 validation or usage error, 2 runtime or numerical error).
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace avfuse::cli
