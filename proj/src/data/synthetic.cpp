// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/data/synthetic.hpp"

#include <cstdio>
#include <random>

#include "avfuse/data/feature_file.hpp"
#include "avfuse/data/manifest.hpp"
#include "avfuse/errors.hpp"

namespace avfuse {

namespace fs = std::filesystem;

namespace {

// Consecutive entries form the ambiguous pairs.
const std::vector<std::string> kObjects = {
    "jackhammer", "motor",  "dog",  "wolf",    "drill", "blender", "train",  "truck",
    "bell",       "gong",   "cat",  "baby",    "tap",   "rain",    "horn",   "trumpet",
    "fan",        "engine", "bird", "whistle", "saw",   "mower",   "clock",  "kettle"};

const std::vector<std::string> kSounds = {"hums",  "rattles", "whirs", "clanks",
                                          "buzzes", "roars",  "ticks", "howls"};

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return std::mt19937_64(seq);
}

Tensor gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t = Tensor::matrix(rows, cols);
  if (stddev == 0.0) return t;
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor plus(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
  return a;
}

// Round through binary32 so that in-memory features equal what a feature
// file stores.
Tensor as_f32(Tensor t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

std::string fill_template(const std::string& tmpl, const std::string& sound) {
  std::string out = tmpl;
  const auto pos = out.find("{sound}");
  if (pos != std::string::npos) out.replace(pos, 7, sound);
  return out;
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  std::vector<std::string> problems;
  if (n_classes < 2) problems.push_back("n_classes must be >= 2");
  if (n_ambiguous_pairs < 0) problems.push_back("n_ambiguous_pairs must be >= 0");
  if (n_classes < 2 * n_ambiguous_pairs) {
    problems.push_back("n_classes (" + std::to_string(n_classes) + ") must be >= 2 * n_ambiguous_pairs (" +
                       std::to_string(2 * n_ambiguous_pairs) + ")");
  }
  if (feature_dim < 1 || audio_len < 1 || visual_len < 1) {
    problems.push_back("feature_dim, audio_len and visual_len must be >= 1");
  }
  if (!(noise_std >= 0.0)) problems.push_back("noise_std must be >= 0");
  if (n_sound_variants < 1) problems.push_back("n_sound_variants must be >= 1");
  if (train_per_class < 0 || eval_per_class < 0) problems.push_back("per-class counts must be >= 0");
  if (!caption_templates.empty() && static_cast<int>(caption_templates.size()) != n_classes) {
    problems.push_back("caption_templates needs one entry per class");
  }
  const std::size_t sounds = sound_words.empty() ? kSounds.size() : sound_words.size();
  if (static_cast<std::size_t>(std::max(n_sound_variants, 1)) > sounds) {
    problems.push_back("n_sound_variants exceeds the available sound words (" +
                       std::to_string(sounds) + ")");
  }
  if (caption_templates.empty() && n_classes > static_cast<int>(kObjects.size())) {
    problems.push_back("at most " + std::to_string(kObjects.size()) +
                       " classes without explicit caption_templates");
  }
  if (!problems.empty()) {
    std::string msg = "synthetic task spec is invalid:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

std::string synthetic_template(int label, const SyntheticTaskSpec& spec) {
  if (!spec.caption_templates.empty()) return spec.caption_templates[static_cast<std::size_t>(label)];
  return "a " + kObjects[static_cast<std::size_t>(label)] + " {sound}";
}

SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticTask task;
  task.spec = spec;
  const auto n = static_cast<std::size_t>(spec.n_classes);
  const auto f = static_cast<std::size_t>(spec.feature_dim);
  const auto ta = static_cast<std::size_t>(spec.audio_len);
  const auto tv = static_cast<std::size_t>(spec.visual_len);
  const std::vector<std::string>& sounds = spec.sound_words.empty() ? kSounds : spec.sound_words;

  std::mt19937_64 proto_rng = substream(spec.seed, 1);
  for (std::size_t c = 0; c < n; ++c) {
    const bool second_of_pair = c % 2 == 1 && static_cast<int>(c / 2) < spec.n_ambiguous_pairs;
    if (second_of_pair) {
      task.audio_prototypes.push_back(task.audio_prototypes[c - 1]);
    } else {
      task.audio_prototypes.push_back(gaussian(proto_rng, ta, f, 1.0));
    }
  }
  for (std::size_t c = 0; c < n; ++c) task.visual_prototypes.push_back(gaussian(proto_rng, tv, f, 1.0));
  for (int v = 0; v < spec.n_sound_variants; ++v) {
    task.variant_prototypes.push_back(gaussian(proto_rng, ta, f, 1.0));
  }

  const auto make_split = [&](int per_class, std::uint64_t stream, const std::string& prefix) {
    std::mt19937_64 rng = substream(spec.seed, stream);
    std::vector<SyntheticExample> out;
    for (int k = 0; k < per_class; ++k) {
      for (std::size_t c = 0; c < n; ++c) {
        SyntheticExample ex;
        ex.label = static_cast<int>(c);
        ex.variant = k % spec.n_sound_variants;
        char id[64];
        std::snprintf(id, sizeof(id), "%s_%05zu", prefix.c_str(), out.size());
        ex.id = id;
        ex.audio = as_f32(plus(plus(task.audio_prototypes[c],
                                    task.variant_prototypes[static_cast<std::size_t>(ex.variant)]),
                               gaussian(rng, ta, f, spec.noise_std)));
        ex.visual = as_f32(plus(task.visual_prototypes[c], gaussian(rng, tv, f, spec.noise_std)));
        ex.caption = fill_template(synthetic_template(ex.label, spec),
                                   sounds[static_cast<std::size_t>(ex.variant)]);
        out.push_back(std::move(ex));
      }
    }
    return out;
  };
  task.train = make_split(spec.train_per_class, 2, "train");
  task.eval = make_split(spec.eval_per_class, 3, "eval");
  return task;
}

void write_synthetic_task(const SyntheticTask& task, const fs::path& dir) {
  fs::create_directories(dir / "features");
  const auto write_split = [&](const std::vector<SyntheticExample>& split, const std::string& name) {
    DatasetManifest m;
    for (const auto& ex : split) {
      ManifestRecord r;
      r.id = ex.id;
      r.audio = dir / "features" / (ex.id + "_audio.avf");
      r.visual_features = dir / "features" / (ex.id + "_visual.avf");
      r.captions = {ex.caption};
      write_feature_file({ex.audio, Modality::kAudio}, r.audio);
      write_feature_file({ex.visual, Modality::kVisual}, *r.visual_features);
      m.records.push_back(std::move(r));
    }
    write_manifest(m, dir / (name + ".jsonl"));
  };
  write_split(task.train, "train");
  write_split(task.eval, "eval");
}

}  // namespace avfuse
