// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "avfuse/model/config.hpp"
#include "avfuse/model/params.hpp"
#include "avfuse/numerics/attention.hpp"
#include "avfuse/numerics/autograd.hpp"

namespace avfuse {

/// Variable-length sequences stored back to back; sequence b occupies rows
/// [offsets[b], offsets[b] + lengths[b]).
struct PackedLayout {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::size_t total = 0;

  static PackedLayout from_lengths(std::span<const std::size_t> lengths);
  /// `batch` sequences that all alias rows [0, length).
  static PackedLayout shared(std::size_t batch, std::size_t length);
  std::size_t batch() const { return lengths.size(); }
};

/// One fusion pass, all matrices (t-1) x d with rows packed like the text.
struct AdaAVATrace {
  Tensor hidden;
  Tensor a_cross;
  Tensor v_cross;
  Tensor a_conf;
  Tensor mask_audio;
  Tensor mask_visual;
  Tensor av_out;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  /// When set, each AdaAVA block appends its trace.
  std::vector<AdaAVATrace>* traces = nullptr;

  double dropout(const ModelConfig& cfg) const { return training && rng ? cfg.dropout : 0.0; }
};

/// Encoded modality memories for a packed batch.
struct Memory {
  Var audio;
  PackedLayout audio_layout;
  Var visual;
  PackedLayout visual_layout;
};

AttentionParams bind_attention(BoundParameters& bp, const std::string& prefix);
Var layer_norm_named(BoundParameters& bp, const std::string& prefix, const Var& x, double eps);

/// Patch projection plus positional embedding, then pre-norm encoder blocks.
/// `patches` holds every sequence of `layout` back to back.
Var audio_encode(BoundParameters& bp, const ModelConfig& cfg, const Var& patches,
                 const PackedLayout& layout, ForwardContext& ctx);

/// Linear map of raw visual features to width d.
Var visual_project(BoundParameters& bp, const ModelConfig& cfg, const Var& raw);

/// H = x + SelfAttention(LN(x)) with causal masking per sequence.
Var decoder_self_attend(BoundParameters& bp, const ModelConfig& cfg, std::size_t block,
                        const Var& x, const PackedLayout& text, ForwardContext& ctx);

/// Cross attention of packed queries onto packed memory, sequence b onto
/// memory sequence b.
Var cross_attend(const Var& queries, const Var& memory, const AttentionParams& params,
                 const PackedLayout& text, const PackedLayout& memory_layout, std::size_t heads,
                 double dropout = 0.0, std::mt19937_64* rng = nullptr);

/// sigmoid([primary ; hidden] W + b), W of shape 2d x d.
Var confidence(const Var& primary_cross, const Var& hidden, const Var& weight, const Var& bias);

/// 1 where x > beta, else 0.
Tensor threshold_mask(const Tensor& x, double beta);

/// conf * a_cross * M_a + (1 - conf) * v_cross * M_v with masks held
/// constant. Fills `trace` (except `hidden`) when given.
Var adaava_fuse(const Var& a_cross, const Var& v_cross, const Var& a_conf, double beta,
                AdaAVATrace* trace = nullptr);

/// Self attention, fusion sublayer for cfg.fusion_mode, then MLP with residual.
Var decoder_block(BoundParameters& bp, const ModelConfig& cfg, std::size_t block, const Var& x,
                  const Memory& memory, const PackedLayout& text, ForwardContext& ctx);

}  // namespace avfuse
