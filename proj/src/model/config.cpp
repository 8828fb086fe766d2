// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/config.hpp"

#include <cmath>
#include <set>
#include <vector>

#include "avfuse/errors.hpp"

namespace avfuse {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kAudioOnly: return "audio_only";
    case FusionMode::kVideoOnly: return "video_only";
    case FusionMode::kConcatenate: return "concatenate";
    case FusionMode::kAdaavaAudio: return "adaava_audio";
    case FusionMode::kAdaavaVideo: return "adaava_video";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view name) {
  for (FusionMode m : {FusionMode::kAudioOnly, FusionMode::kVideoOnly, FusionMode::kConcatenate,
                       FusionMode::kAdaavaAudio, FusionMode::kAdaavaVideo}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown fusion mode '" + std::string(name) +
                    "' (expected audio_only, video_only, concatenate, adaava_audio or adaava_video)");
}

bool uses_audio(FusionMode mode) { return mode != FusionMode::kVideoOnly; }
bool uses_visual(FusionMode mode) { return mode != FusionMode::kAudioOnly; }
bool is_adaava(FusionMode mode) {
  return mode == FusionMode::kAdaavaAudio || mode == FusionMode::kAdaavaVideo;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d = 512;
  c.heads = 8;
  c.encoder_blocks = 12;
  c.decoder_blocks = 4;
  return c;
}

ModelConfig ModelConfig::desk_scale() { return ModelConfig{}; }

std::size_t ModelConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(d)));
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (d == 0 || heads == 0 || d % heads != 0) {
    problems.push_back("d (" + std::to_string(d) + ") must be a positive multiple of heads (" +
                       std::to_string(heads) + ")");
  }
  if (!(beta >= 0.0 && beta <= 1.0)) problems.push_back("beta must lie in [0, 1]");
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) problems.push_back("mlp_ratio must be positive");
  if (decoder_blocks == 0) problems.push_back("decoder_blocks must be >= 1");
  if (max_caption_len < 3) problems.push_back("max_caption_len must be >= 3");
  if (vocab_size < 5) problems.push_back("vocab_size must cover the reserved tokens plus one word");
  if (uses_audio(fusion_mode) && (audio_in_dim == 0 || max_audio_len == 0)) {
    problems.push_back("audio_in_dim and max_audio_len must be positive");
  }
  if (uses_visual(fusion_mode) && visual_in_dim == 0) {
    problems.push_back("visual_in_dim must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
  if (!(ln_eps > 0.0)) problems.push_back("ln_eps must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"heads", heads},
          {"encoder_blocks", encoder_blocks},
          {"decoder_blocks", decoder_blocks},
          {"mlp_ratio", mlp_ratio},
          {"beta", beta},
          {"fusion_mode", std::string(to_string(fusion_mode))},
          {"max_caption_len", max_caption_len},
          {"vocab_size", vocab_size},
          {"audio_in_dim", audio_in_dim},
          {"max_audio_len", max_audio_len},
          {"visual_in_dim", visual_in_dim},
          {"dropout", dropout},
          {"ln_eps", ln_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  const std::set<std::string> known = {"d",         "heads",        "encoder_blocks", "decoder_blocks",
                                       "mlp_ratio", "beta",         "fusion_mode",    "max_caption_len",
                                       "vocab_size", "audio_in_dim", "max_audio_len",  "visual_in_dim",
                                       "dropout",   "ln_eps"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    const auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d", c.d);
    get("heads", c.heads);
    get("encoder_blocks", c.encoder_blocks);
    get("decoder_blocks", c.decoder_blocks);
    get("mlp_ratio", c.mlp_ratio);
    get("beta", c.beta);
    if (j.contains("fusion_mode")) c.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
    get("max_caption_len", c.max_caption_len);
    get("vocab_size", c.vocab_size);
    get("audio_in_dim", c.audio_in_dim);
    get("max_audio_len", c.max_audio_len);
    get("visual_in_dim", c.visual_in_dim);
    get("dropout", c.dropout);
    get("ln_eps", c.ln_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace avfuse
