// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/cli/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "avfuse/data/feature_file.hpp"
#include "avfuse/data/manifest.hpp"
#include "avfuse/errors.hpp"
#include "avfuse/frontend/mel.hpp"
#include "avfuse/frontend/wav.hpp"
#include "avfuse/inference/decode.hpp"
#include "avfuse/model/block_check.hpp"
#include "avfuse/model/checkpoint.hpp"
#include "avfuse/training/dataset.hpp"

namespace avfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kPathKeys = {"train_manifest", "eval_manifest", "checkpoint_dir", "metrics_log",
                                         "report_path"};
const std::set<std::string> kTopKeys = {"seed", "fusion_mode", "model", "train", "train_manifest",
                                        "eval_manifest", "checkpoint_dir", "metrics_log", "report_path",
                                        "overrides"};
const std::set<std::string> kInferredModelKeys = {"audio_in_dim", "visual_in_dim", "max_audio_len"};

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [k, v] : j.items()) out.insert(k);
  return out;
}

[[noreturn]] void throw_problems(const std::string& head, const std::vector<std::string>& problems) {
  std::string msg = head;
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

// Appends the indented lines of a ConfigError raised by a validate() call.
void collect(std::vector<std::string>& problems, const std::function<void()>& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    std::istringstream is(e.what());
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
      if (first && line.ends_with(":")) {
        first = false;
        continue;
      }
      first = false;
      const auto pos = line.find_first_not_of(' ');
      if (pos != std::string::npos) problems.push_back(line.substr(pos));
    }
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string json_diff(const json& expected, const json& actual) {
  std::string out;
  for (const auto& [k, v] : expected.items()) {
    if (!actual.contains(k) || actual.at(k) != v) {
      out += "\n  " + k + ": " + v.dump() + " vs " + (actual.contains(k) ? actual.at(k).dump() : "<missing>");
    }
  }
  return out;
}

Tensor load_audio_input(const fs::path& path, const MelConfig& mel) {
  if (is_wav_path(path)) {
    const Waveform w = read_wav(path);
    return patchify(log_mel(w.samples, w.sample_rate, mel), mel.patch_frames);
  }
  return read_feature_file(path, Modality::kAudio).values;
}

void require_visual(const ModelConfig& cfg, const DatasetManifest& manifest) {
  if (!uses_visual(cfg.fusion_mode)) return;
  std::size_t missing = 0;
  for (const auto& r : manifest.records) missing += !r.visual_features.has_value();
  if (missing > 0) {
    throw ConfigError("fusion mode " + std::string(to_string(cfg.fusion_mode)) + " needs visual features but " +
                      std::to_string(missing) + " record(s) in " + manifest.source.string() + " have none");
  }
}

void check_widths(const std::vector<Clip>& clips, const ModelConfig& cfg) {
  std::vector<std::string> problems;
  for (const Clip& c : clips) {
    if (uses_audio(cfg.fusion_mode) && c.input.audio.cols() != cfg.audio_in_dim) {
      problems.push_back(c.id + ": audio width " + std::to_string(c.input.audio.cols()) + ", expected " +
                         std::to_string(cfg.audio_in_dim));
    }
    if (uses_audio(cfg.fusion_mode) && c.input.audio.rows() > cfg.max_audio_len) {
      problems.push_back(c.id + ": " + std::to_string(c.input.audio.rows()) + " audio patches exceed max_audio_len " +
                         std::to_string(cfg.max_audio_len));
    }
    if (uses_visual(cfg.fusion_mode) && c.input.visual.rows() > 0 && c.input.visual.cols() != cfg.visual_in_dim) {
      problems.push_back(c.id + ": visual width " + std::to_string(c.input.visual.cols()) + ", expected " +
                         std::to_string(cfg.visual_in_dim));
    }
    if (problems.size() >= 20) break;
  }
  if (!problems.empty()) {
    std::string msg = "input shapes do not match the model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

void fill_empty_visual(std::vector<Clip>& clips, std::size_t width) {
  for (Clip& c : clips) {
    if (c.input.visual.rows() == 0) c.input.visual = Tensor(Shape{0, width});
  }
}

void rewrite_log_prefix(const fs::path& log, std::uint64_t steps) {
  if (!fs::exists(log)) return;
  std::vector<std::string> keep;
  {
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (json::parse(line).at("step").get<std::uint64_t>() < steps) keep.push_back(line);
    }
  }
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"fusion_mode", std::string(to_string(model.fusion_mode))},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"train_manifest", train_manifest.generic_string()},
          {"eval_manifest", eval_manifest.generic_string()},
          {"checkpoint_dir", checkpoint_dir.generic_string()},
          {"metrics_log", metrics_log.generic_string()},
          {"report_path", report_path.generic_string()},
          {"overrides", overrides}};
}

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + text + "' is not key=value");
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

RunConfig resolve_run_config(const std::optional<fs::path>& file, const std::vector<Override>& overrides) {
  json merged = json::object();
  if (file) {
    merged = read_json_file(*file);
    if (!merged.is_object()) throw ConfigError(file->string() + ": run config must be an object");
    const fs::path base = file->parent_path();
    for (const auto& key : kPathKeys) {
      if (merged.contains(key) && merged.at(key).is_string()) {
        const fs::path p = merged.at(key).get<std::string>();
        if (!p.empty() && p.is_relative()) merged[key] = (base / p).lexically_normal().generic_string();
      }
    }
  }
  RunConfig rc;
  for (const auto& [key, value] : overrides) {
    json* node = &merged;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw UsageError("malformed override key '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) throw UsageError("override key '" + key + "' descends into a non-object");
      node = &child;
      start = dot + 1;
    }
    rc.overrides.push_back(key + "=" + value.dump());
  }

  std::vector<std::string> problems;
  for (const auto& k : keys_of(merged)) {
    if (!kTopKeys.count(k)) problems.push_back("unknown key '" + k + "'");
  }
  const json model_json = merged.value("model", json::object());
  const json train_json = merged.value("train", json::object());
  if (!model_json.is_object()) problems.push_back("'model' must be an object");
  if (!train_json.is_object()) problems.push_back("'train' must be an object");
  if (!model_json.is_object() || !train_json.is_object()) throw_problems("invalid run config:", problems);

  const std::set<std::string> model_keys = keys_of(ModelConfig{}.to_json());
  const std::set<std::string> train_keys = keys_of(TrainConfig{}.to_json());
  for (const auto& k : keys_of(model_json)) {
    if (!model_keys.count(k)) problems.push_back("unknown key 'model." + k + "'");
  }
  for (const auto& k : keys_of(train_json)) {
    if (!train_keys.count(k)) problems.push_back("unknown key 'train." + k + "'");
  }
  if (!problems.empty()) throw_problems("invalid run config:", problems);

  try {
    rc.model = ModelConfig::from_json(model_json);
  } catch (const std::exception& e) {
    problems.push_back(std::string("model: ") + e.what());
  }
  try {
    rc.train = TrainConfig::from_json(train_json);
  } catch (const std::exception& e) {
    problems.push_back(std::string("train: ") + e.what());
  }
  try {
    if (merged.contains("fusion_mode")) {
      const FusionMode mode = parse_fusion_mode(merged.at("fusion_mode").get<std::string>());
      if (model_json.contains("fusion_mode") && parse_fusion_mode(model_json.at("fusion_mode").get<std::string>()) != mode) {
        problems.push_back("fusion_mode and model.fusion_mode disagree");
      }
      rc.model.fusion_mode = mode;
    }
    if (merged.contains("seed")) {
      rc.seed = merged.at("seed").get<std::uint64_t>();
      if (train_json.contains("seed") && train_json.at("seed").get<std::uint64_t>() != rc.seed) {
        problems.push_back("seed and train.seed disagree");
      }
    } else {
      rc.seed = rc.train.seed;
    }
    rc.train.seed = rc.seed;
    const auto path_of = [&](const char* key) {
      return merged.contains(key) ? fs::path(merged.at(key).get<std::string>()) : fs::path();
    };
    rc.train_manifest = path_of("train_manifest");
    rc.eval_manifest = path_of("eval_manifest");
    rc.checkpoint_dir = path_of("checkpoint_dir");
    rc.metrics_log = path_of("metrics_log");
    rc.report_path = path_of("report_path");
  } catch (const json::exception& e) {
    problems.push_back(std::string("bad value type: ") + e.what());
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  if (!problems.empty()) throw_problems("invalid run config:", problems);
  if (rc.metrics_log.empty() && !rc.checkpoint_dir.empty()) rc.metrics_log = rc.checkpoint_dir / "metrics.jsonl";
  if (rc.report_path.empty() && !rc.checkpoint_dir.empty()) rc.report_path = rc.checkpoint_dir / "report.json";
  for (const auto& k : keys_of(model_json)) rc.explicit_model_keys.push_back(k);
  return rc;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / "avfuse.lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw IoError(dir.string() + " is in use by another process (remove " + path_.string() +
                  " if that process is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::size_t worker_count() {
  if (const char* env = std::getenv("AVFUSE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError(std::string("AVFUSE_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void cmd_synth(const SynthOptions& options, std::ostream& out) {
  options.spec.validate();
  if (options.out_dir.empty()) throw UsageError("synth: an output directory is required");
  if (fs::exists(options.out_dir)) {
    if (!fs::is_directory(options.out_dir)) throw ValidationError(options.out_dir.string() + " is not a directory");
    if (!fs::is_empty(options.out_dir)) {
      if (!options.force) {
        throw ValidationError(options.out_dir.string() + " is not empty; pass --force to overwrite");
      }
      fs::remove_all(options.out_dir / "features");
      for (const char* f : {"train.jsonl", "eval.jsonl", "synth_config.json"}) fs::remove(options.out_dir / f);
    }
  }
  const SyntheticTask task = generate_synthetic_task(options.spec);
  write_synthetic_task(task, options.out_dir);
  const SyntheticTaskSpec& s = options.spec;
  write_json_file({{"n_classes", s.n_classes},
                   {"n_ambiguous_pairs", s.n_ambiguous_pairs},
                   {"feature_dim", s.feature_dim},
                   {"audio_len", s.audio_len},
                   {"visual_len", s.visual_len},
                   {"noise_std", s.noise_std},
                   {"n_sound_variants", s.n_sound_variants},
                   {"train_per_class", s.train_per_class},
                   {"eval_per_class", s.eval_per_class},
                   {"seed", s.seed}},
                  options.out_dir / "synth_config.json");
  out << "synthetic task written to " << options.out_dir.string() << "\n"
      << "  classes " << s.n_classes << ", ambiguous pairs " << s.n_ambiguous_pairs << ", sound variants "
      << s.n_sound_variants << "\n"
      << "  train " << task.train.size() << " clips, eval " << task.eval.size() << " clips\n"
      << "  audio " << s.audio_len << "x" << s.feature_dim << ", visual " << s.visual_len << "x"
      << s.feature_dim << ", noise_std " << s.noise_std << ", seed " << s.seed << "\n";
}

TrainState cmd_train(const TrainOptions& options, std::ostream& out) {
  RunConfig rc = resolve_run_config(options.config, options.overrides);
  std::vector<std::string> problems;
  const auto need_file = [&](const fs::path& p, const char* key) {
    if (p.empty()) problems.push_back(std::string(key) + " is required");
    else if (!fs::is_regular_file(p)) problems.push_back(std::string(key) + " " + p.string() + " does not exist");
  };
  need_file(rc.train_manifest, "train_manifest");
  need_file(rc.eval_manifest, "eval_manifest");
  if (rc.checkpoint_dir.empty()) {
    problems.push_back("checkpoint_dir is required");
  } else if (fs::exists(rc.checkpoint_dir) && !fs::is_directory(rc.checkpoint_dir)) {
    problems.push_back("checkpoint_dir " + rc.checkpoint_dir.string() + " is not a directory");
  } else if (options.resume && !fs::is_regular_file(rc.checkpoint_dir / "last.avck")) {
    problems.push_back("--resume: " + (rc.checkpoint_dir / "last.avck").string() + " does not exist");
  } else if (!options.resume && fs::exists(rc.checkpoint_dir / "last.avck")) {
    problems.push_back("checkpoint_dir " + rc.checkpoint_dir.string() +
                       " already holds a run; pass --resume or choose another directory");
  }
  collect(problems, [&] { rc.train.validate(); });
  collect(problems, [&] {
    ModelConfig probe = rc.model;
    probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 5);
    probe.validate();
  });
  if (!problems.empty()) throw_problems("invalid run config:", problems);

  const DatasetManifest train_manifest = load_manifest(rc.train_manifest);
  const DatasetManifest eval_manifest = load_manifest(rc.eval_manifest);
  require_visual(rc.model, train_manifest);
  require_visual(rc.model, eval_manifest);
  std::vector<Clip> train_clips = load_clips(train_manifest);
  std::vector<Clip> eval_clips = load_clips(eval_manifest);

  const auto is_explicit = [&](const std::string& key) {
    return std::find(rc.explicit_model_keys.begin(), rc.explicit_model_keys.end(), key) !=
           rc.explicit_model_keys.end();
  };
  if (!is_explicit("audio_in_dim") && !train_clips.empty()) rc.model.audio_in_dim = train_clips.front().input.audio.cols();
  if (!is_explicit("visual_in_dim")) {
    for (const Clip& c : train_clips) {
      if (c.input.visual.rows() > 0) {
        rc.model.visual_in_dim = c.input.visual.cols();
        break;
      }
    }
  }
  if (!is_explicit("max_audio_len")) {
    for (const auto* set : {&train_clips, &eval_clips}) {
      for (const Clip& c : *set) rc.model.max_audio_len = std::max(rc.model.max_audio_len, c.input.audio.rows());
    }
  }
  fill_empty_visual(train_clips, rc.model.visual_in_dim);
  fill_empty_visual(eval_clips, rc.model.visual_in_dim);
  check_widths(train_clips, rc.model);
  check_widths(eval_clips, rc.model);

  std::optional<TrainingCheckpoint> resumed;
  if (options.resume) resumed = load_training_checkpoint(rc.checkpoint_dir / "last.avck");
  const Vocabulary vocab = resumed ? resumed->bundle.vocab : build_caption_vocabulary(train_clips);
  rc.model.vocab_size = vocab.size();
  rc.model.validate();
  if (resumed) {
    const std::string model_diff = json_diff(resumed->bundle.model.config().to_json(), rc.model.to_json());
    TrainConfig saved = resumed->config;
    saved.epochs = rc.train.epochs;
    const std::string train_diff = json_diff(saved.to_json(), rc.train.to_json());
    if (!model_diff.empty() || !train_diff.empty()) {
      throw ConfigError("--resume: run config differs from the checkpoint (checkpoint vs config):" + model_diff +
                        train_diff);
    }
  }

  fs::create_directories(rc.checkpoint_dir);
  DirectoryLock lock(rc.checkpoint_dir);
  write_json_file(rc.to_json(), rc.checkpoint_dir / "run_config.json");
  out << "avfuse train: fusion_mode=" << to_string(rc.model.fusion_mode) << " beta=" << rc.model.beta
      << " seed=" << rc.seed << " epochs=" << rc.train.epochs << " lr_peak=" << rc.train.lr_peak
      << " batch_size=" << rc.train.batch_size << "\n";
  out << rc.to_json().dump(2) << "\n";

  const std::vector<TrainExample> train = make_train_examples(train_clips, vocab, rc.model.max_caption_len);
  const std::vector<TrainExample> val = make_train_examples(eval_clips, vocab, rc.model.max_caption_len);
  out << "train examples " << train.size() << ", validation examples " << val.size() << ", vocabulary "
      << vocab.size() << "\n";

  std::optional<Captioner> model;
  TrainState state;
  if (resumed) {
    model.emplace(resumed->bundle.model);
    state = resumed->state;
    rewrite_log_prefix(rc.metrics_log, state.step);
    out << "resuming at epoch " << state.epoch << ", step " << state.step << "\n";
  } else {
    model.emplace(rc.model, rc.seed);
    state = initial_train_state(*model, rc.train);
    if (!rc.metrics_log.empty()) fs::remove(rc.metrics_log);
  }

  FitOptions fo;
  fo.checkpoint_dir = rc.checkpoint_dir;
  if (!rc.metrics_log.empty()) fo.metrics_log = rc.metrics_log;
  fo.stop_after_epoch = options.stop_after_epoch;
  if (!options.quiet) {
    fo.on_step = [&](const MetricsRecord& r) {
      if (!r.val_loss) return;
      out << "epoch " << (r.epoch + 1) << " step " << (r.step + 1) << " lr " << format_double(r.lr)
          << " train_loss " << format_double(r.train_loss) << " val_loss " << format_double(*r.val_loss)
          << "\n";
    };
  }
  FitResult result = fit(*model, vocab, train, val, rc.train, state, fo);
  if (result.state.has_best) {
    out << "best val_loss " << format_double(result.state.best_val_loss) << " at epoch "
        << result.state.best_epoch << "\n";
  }
  return result.state;
}

MetricReport cmd_eval(const EvalOptions& options, std::ostream& out) {
  std::vector<std::string> problems;
  if (!fs::is_regular_file(options.checkpoint)) problems.push_back("checkpoint " + options.checkpoint.string() + " does not exist");
  if (!fs::is_regular_file(options.manifest)) problems.push_back("manifest " + options.manifest.string() + " does not exist");
  if (!options.greedy && options.beam < 1) problems.push_back("beam must be >= 1");
  if (options.config && !fs::is_regular_file(*options.config)) {
    problems.push_back("config " + options.config->string() + " does not exist");
  }
  if (!problems.empty()) throw_problems("invalid eval options:", problems);

  const ModelBundle bundle = load_model(options.checkpoint);
  const Captioner& model = bundle.model;
  const ModelConfig& cfg = model.config();
  if (options.config) {
    RunConfig rc = resolve_run_config(options.config, options.overrides);
    ModelConfig expected = rc.model;
    expected.vocab_size = cfg.vocab_size;
    for (const auto& key : kInferredModelKeys) {
      if (std::find(rc.explicit_model_keys.begin(), rc.explicit_model_keys.end(), key) ==
          rc.explicit_model_keys.end()) {
        if (key == "audio_in_dim") expected.audio_in_dim = cfg.audio_in_dim;
        if (key == "visual_in_dim") expected.visual_in_dim = cfg.visual_in_dim;
        if (key == "max_audio_len") expected.max_audio_len = cfg.max_audio_len;
      }
    }
    if (!(expected == cfg)) {
      std::string msg = "checkpoint does not match the config (config vs checkpoint):" +
                        json_diff(expected.to_json(), cfg.to_json());
      std::vector<std::string> shapes;
      try {
        shapes = parameter_mismatches(expected, model.parameters());
      } catch (const std::exception&) {
      }
      if (!shapes.empty()) msg += "\nparameter shape differences:";
      for (const auto& s : shapes) msg += "\n  " + s;
      throw ValidationError(msg);
    }
  }

  const DatasetManifest manifest = load_manifest(options.manifest);
  require_visual(cfg, manifest);
  std::vector<Clip> clips = load_clips(manifest);
  fill_empty_visual(clips, cfg.visual_in_dim);
  check_widths(clips, cfg);

  const DecodeOptions dopts{cfg.max_caption_len, Vocabulary::kSos, Vocabulary::kEos};
  std::vector<std::vector<int>> decoded(clips.size());
  std::vector<std::exception_ptr> failures(clips.size());
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(clips.size(), 1));
  const auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < clips.size(); i += workers) {
      try {
        const CaptionerScorer scorer(model, model.encode(clips[i].input));
        decoded[i] = options.greedy ? greedy_decode(scorer, dopts).tokens
                                    : beam_search(scorer, options.beam, dopts).front().tokens;
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (failures[i]) {
      try {
        std::rethrow_exception(failures[i]);
      } catch (const std::exception& e) {
        throw NumericalError("decoding clip " + clips[i].id + ": " + e.what());
      }
    }
  }

  const fs::path report = options.report.value_or(options.checkpoint.parent_path() / "report.json");
  const fs::path cand_path = options.candidates.value_or(report.parent_path() / "candidates.jsonl");
  if (!report.parent_path().empty()) fs::create_directories(report.parent_path());
  if (!cand_path.parent_path().empty()) fs::create_directories(cand_path.parent_path());
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    candidates.push_back({clips[i].id, join_tokens(decode_caption(decoded[i], bundle.vocab))});
  }
  write_candidates(candidates, cand_path);
  const MetricReport rep = evaluate(cand_path, options.manifest);
  write_json_file(rep.to_json(), report);
  write_json_file({{"checkpoint", options.checkpoint.generic_string()},
                   {"manifest", options.manifest.generic_string()},
                   {"decoder", options.greedy ? "greedy" : "beam"},
                   {"beam", options.greedy ? 1 : options.beam},
                   {"candidates", cand_path.generic_string()},
                   {"report", report.generic_string()},
                   {"model", cfg.to_json()}},
                  report.parent_path() / "eval_config.json");
  out << rep.to_json().dump(2) << "\n";
  return rep;
}

std::string cmd_infer(const InferOptions& options, std::ostream& out) {
  std::vector<std::string> problems;
  if (!fs::is_regular_file(options.checkpoint)) problems.push_back("checkpoint " + options.checkpoint.string() + " does not exist");
  if (!fs::is_regular_file(options.audio)) problems.push_back("audio " + options.audio.string() + " does not exist");
  if (options.visual && !fs::is_regular_file(*options.visual)) {
    problems.push_back("visual " + options.visual->string() + " does not exist");
  }
  if (options.beam < 1) problems.push_back("beam must be >= 1");
  if (!problems.empty()) throw_problems("invalid infer options:", problems);

  const ModelBundle bundle = load_model(options.checkpoint);
  const Captioner& model = bundle.model;
  const ModelConfig& cfg = model.config();
  if (uses_visual(cfg.fusion_mode) && !options.visual) {
    throw ConfigError("fusion mode " + std::string(to_string(cfg.fusion_mode)) + " needs visual features (--visual)");
  }
  ModalityInput input;
  input.audio = load_audio_input(options.audio, MelConfig{});
  input.visual = options.visual ? read_feature_file(*options.visual, Modality::kVisual).values
                                : Tensor(Shape{0, cfg.visual_in_dim});
  model.check_input(input);
  const EncodedModalities enc = model.encode(input);
  const DecodeOptions dopts{cfg.max_caption_len, Vocabulary::kSos, Vocabulary::kEos};
  const CaptionerScorer scorer(model, enc);
  const Hypothesis best = beam_search(scorer, options.beam, dopts).front();
  const std::string caption = join_tokens(decode_caption(best.tokens, bundle.vocab));
  out << caption << "\n";

  if (options.trace) {
    if (!is_adaava(cfg.fusion_mode)) {
      out << "trace: fusion mode " << std::string(to_string(cfg.fusion_mode)) << " has no confidence gate\n";
      return caption;
    }
    std::vector<int> prefix = best.tokens;
    if (best.finished && prefix.size() > 1) prefix.pop_back();
    std::vector<AdaAVATrace> traces;
    model.next_token_logits(enc, std::span(&prefix, 1), &traces);
    out << "trace: beta " << cfg.beta << ", " << prefix.size() << " positions\n";
    for (std::size_t b = 0; b < traces.size(); ++b) {
      const AdaAVATrace& t = traces[b];
      const std::size_t rows = t.a_conf.rows(), cols = t.a_conf.cols();
      double ma_total = 0.0, mv_total = 0.0;
      out << "block " << b << "\n";
      for (std::size_t r = 0; r < rows; ++r) {
        double conf = 0.0, ma = 0.0, mv = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          conf += t.a_conf(r, c);
          ma += t.mask_audio(r, c);
          mv += t.mask_visual(r, c);
        }
        ma_total += ma;
        mv_total += mv;
        out << "  position " << r << " mean_a_conf " << format_double(conf / static_cast<double>(cols))
            << " audio_mask_density " << format_double(ma / static_cast<double>(cols))
            << " visual_mask_density " << format_double(mv / static_cast<double>(cols)) << "\n";
      }
      const double n = static_cast<double>(rows * cols);
      out << "  overall audio_mask_density " << format_double(ma_total / n) << " visual_mask_density "
          << format_double(mv_total / n) << "\n";
    }
  }
  return caption;
}

bool cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  BlockCheckOptions bo;
  bo.config = ModelConfig::desk_scale();
  bo.config.fusion_mode = parse_fusion_mode(options.fusion_mode);
  bo.config.vocab_size = 16;
  bo.config.audio_in_dim = 8;
  bo.config.visual_in_dim = 8;
  bo.config.dropout = 0.0;
  bo.seed = options.seed;
  bo.exclusion = options.exclusion;
  bo.near_threshold = options.near_threshold;
  const std::vector<GroupCheck> groups = check_decoder_block_gradients(bo);
  out << "gradcheck: decoder block, fusion_mode " << options.fusion_mode << ", d " << bo.config.d << ", seed "
      << options.seed << ", exclusion " << (options.exclusion ? "on" : "off")
      << (options.near_threshold ? ", near-threshold point" : "") << "\n";
  double worst = 0.0;
  for (const GroupCheck& g : groups) {
    worst = std::max(worst, g.max_rel_error);
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << g.max_rel_error;
    out << "  " << std::left << std::setw(28) << g.group << " max_rel_error " << err.str() << "  checked "
        << g.checked << "  excluded " << g.excluded << (g.max_rel_error >= options.threshold ? "  FAIL" : "")
        << "\n";
  }
  const bool ok = worst < options.threshold;
  std::ostringstream w;
  w << std::scientific << std::setprecision(3) << worst;
  out << (ok ? "PASS" : "FAIL") << ": worst relative error " << w.str() << " (threshold " << options.threshold
      << ")\n";
  return ok;
}

}  // namespace avfuse::cli
