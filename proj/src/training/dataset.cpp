// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/training/dataset.hpp"

#include "avfuse/data/feature_file.hpp"
#include "avfuse/errors.hpp"
#include "avfuse/frontend/wav.hpp"

namespace avfuse {

namespace {

std::vector<std::vector<std::string>> normalise_all(const std::vector<std::string>& captions) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : captions) out.push_back(normalize_caption(c));
  return out;
}

}  // namespace

std::vector<Clip> load_clips(const DatasetManifest& manifest, const MelConfig& mel,
                             std::size_t visual_width) {
  std::vector<Clip> clips;
  clips.reserve(manifest.size());
  for (const ManifestRecord& r : manifest.records) {
    Clip c;
    c.id = r.id;
    if (is_wav_path(r.audio)) {
      const Waveform w = read_wav(r.audio);
      const MelSpec spec = log_mel(w.samples, w.sample_rate, mel);
      c.mel = spec.frames;
      c.input.audio = patchify(spec, mel.patch_frames);
    } else {
      c.input.audio = read_feature_file(r.audio, Modality::kAudio).values;
    }
    if (r.visual_features) {
      c.input.visual = read_feature_file(*r.visual_features, Modality::kVisual).values;
    } else {
      c.input.visual = Tensor(Shape{0, visual_width});
    }
    c.references = normalise_all(r.captions);
    clips.push_back(std::move(c));
  }
  return clips;
}

std::vector<Clip> clips_from_synthetic(std::span<const SyntheticExample> examples) {
  std::vector<Clip> clips;
  for (const SyntheticExample& e : examples) {
    Clip c;
    c.id = e.id;
    c.input = {e.audio, e.visual};
    c.references = {normalize_caption(e.caption)};
    clips.push_back(std::move(c));
  }
  return clips;
}

Vocabulary build_caption_vocabulary(std::span<const Clip> clips, int min_count) {
  std::vector<std::vector<std::string>> corpus;
  for (const Clip& c : clips) corpus.insert(corpus.end(), c.references.begin(), c.references.end());
  return Vocabulary::build(corpus, min_count);
}

std::vector<TrainExample> make_train_examples(std::span<const Clip> clips, const Vocabulary& vocab,
                                              std::size_t max_len) {
  std::vector<TrainExample> out;
  for (const Clip& c : clips) {
    for (const auto& ref : c.references) {
      const TokenSequence seq = encode_caption(ref, vocab, max_len);
      TrainExample ex;
      ex.input = c.input;
      ex.mel = c.mel;
      ex.tokens.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.length));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace avfuse
