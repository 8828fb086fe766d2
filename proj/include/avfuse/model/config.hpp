// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "json.hpp"

namespace avfuse {

/// Which cross-modal sublayer the decoder blocks use.
enum class FusionMode {
  kAudioOnly,    // cross-attention over audio, with residual
  kVideoOnly,    // cross-attention over visual features, with residual
  kConcatenate,  // cross-attention over audio and visual rows joined in time
  kAdaavaAudio,  // gated audio/visual fusion, confidence from audio cross-attention
  kAdaavaVideo,  // gated audio/visual fusion, confidence from visual cross-attention
};

std::string_view to_string(FusionMode mode);
/// Accepts the names printed by to_string; throws ConfigError otherwise.
FusionMode parse_fusion_mode(std::string_view name);

bool uses_audio(FusionMode mode);
bool uses_visual(FusionMode mode);
bool is_adaava(FusionMode mode);

struct ModelConfig {
  std::size_t d = 128;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  double mlp_ratio = 4.0;
  double beta = 0.13;
  FusionMode fusion_mode = FusionMode::kAdaavaAudio;
  std::size_t max_caption_len = 22;
  std::size_t vocab_size = 0;
  std::size_t audio_in_dim = 256;  // one 4 x 64 mel patch
  std::size_t max_audio_len = 256;
  std::size_t visual_in_dim = 512;
  double dropout = 0.1;
  double ln_eps = 1e-5;

  /// Full-size architecture: d=512, 8 heads, 12 encoder and 4 decoder blocks.
  static ModelConfig full_scale();
  /// The default small configuration used by tests: d=128, 4 heads,
  /// 2 encoder and 2 decoder blocks.
  static ModelConfig desk_scale();

  std::size_t mlp_hidden() const;
  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace avfuse
