// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avfuse/model/config.hpp"
#include "avfuse/model/layers.hpp"
#include "avfuse/model/params.hpp"

namespace avfuse {

enum class InitKind { kZeros, kOnes, kXavier, kNormal };

struct ParameterSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::kZeros;
  double std = 0.0;  // for kNormal
};

/// Every parameter the configuration needs, in a fixed order.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg);

/// Each tensor is drawn from its own stream keyed by (seed, name), so two
/// configurations that share a parameter name get identical values.
ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Every mismatch between `store` and the layout of `cfg`, one line each,
/// in layout order; unexpected names come last. Empty when they agree.
std::vector<std::string> parameter_mismatches(const ModelConfig& cfg, const ParameterStore& store);

/// Raw inputs of one clip. audio: T_a x audio_in_dim patches; visual:
/// T_v x visual_in_dim. An unused modality may have zero rows.
struct ModalityInput {
  Tensor audio;
  Tensor visual;
};

/// Encoder outputs of one clip, reused across decoding steps.
struct EncodedModalities {
  Tensor audio;   // T_a x d, or empty when the mode ignores audio
  Tensor visual;  // T_v x d, or empty when the mode ignores visual
};

class Captioner {
 public:
  Captioner(ModelConfig config, std::uint64_t seed);
  /// Throws ValidationError naming the first mismatching parameter.
  Captioner(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const ParameterStore& parameters() const { return params_; }
  ParameterStore& mutable_parameters() { return params_; }

  /// Checks modality presence, widths and lengths for `cfg.fusion_mode`.
  void check_input(const ModalityInput& input, std::size_t index = 0) const;

  /// Differentiable packed forward: logits (sum of prefix lengths) x vocab,
  /// prefix b occupying rows text.offsets[b] ...
  Var packed_logits(BoundParameters& bp, std::span<const ModalityInput> inputs,
                    std::span<const std::vector<int>> prefixes, ForwardContext& ctx,
                    PackedLayout* text_layout = nullptr) const;

  /// Batch logits (B x L x vocab) for right-padded prefixes; rows past each
  /// length are zero. Non-finite logits raise NumericalError naming the
  /// batch index.
  Tensor forward(std::span<const ModalityInput> inputs,
                 const std::vector<std::vector<int>>& padded_prefixes,
                 std::span<const std::size_t> lengths) const;

  EncodedModalities encode(const ModalityInput& input) const;

  /// Next-token logits (one row per prefix, vocab wide) for prefixes that
  /// all condition on the same clip.
  Tensor next_token_logits(const EncodedModalities& enc, std::span<const std::vector<int>> prefixes,
                           std::vector<AdaAVATrace>* traces = nullptr) const;

 private:
  Memory encode_memory(BoundParameters& bp, std::span<const ModalityInput> inputs,
                       ForwardContext& ctx) const;
  Var decode(BoundParameters& bp, const Memory& memory, std::span<const std::vector<int>> prefixes,
             const PackedLayout& text, ForwardContext& ctx) const;

  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace avfuse
