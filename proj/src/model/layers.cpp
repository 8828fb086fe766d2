// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/layers.hpp"

#include <numeric>

#include "avfuse/errors.hpp"

namespace avfuse {

PackedLayout PackedLayout::from_lengths(std::span<const std::size_t> lengths) {
  PackedLayout p;
  for (std::size_t len : lengths) {
    p.offsets.push_back(p.total);
    p.lengths.push_back(len);
    p.total += len;
  }
  return p;
}

PackedLayout PackedLayout::shared(std::size_t batch, std::size_t length) {
  PackedLayout p;
  p.offsets.assign(batch, 0);
  p.lengths.assign(batch, length);
  p.total = length;
  return p;
}

AttentionParams bind_attention(BoundParameters& bp, const std::string& prefix) {
  return {bp(prefix + ".wq"), bp(prefix + ".bq"), bp(prefix + ".wk"), bp(prefix + ".bk"),
          bp(prefix + ".wv"), bp(prefix + ".bv"), bp(prefix + ".wo"), bp(prefix + ".bo")};
}

Var layer_norm_named(BoundParameters& bp, const std::string& prefix, const Var& x, double eps) {
  return ag::layer_norm(x, bp(prefix + ".gain"), bp(prefix + ".bias"), eps);
}

namespace {

AttentionLayout self_layout(const PackedLayout& p, bool causal) {
  AttentionLayout layout;
  layout.causal = causal;
  for (std::size_t b = 0; b < p.batch(); ++b) {
    layout.segments.push_back({p.offsets[b], p.lengths[b], p.offsets[b], p.lengths[b]});
  }
  return layout;
}

Var mlp(BoundParameters& bp, const std::string& prefix, const Var& x, double dropout,
        std::mt19937_64* rng) {
  Var h = ag::gelu(ag::linear(x, bp(prefix + ".w1"), bp(prefix + ".b1")));
  if (dropout > 0.0) h = ag::dropout(h, dropout, *rng);
  return ag::linear(h, bp(prefix + ".w2"), bp(prefix + ".b2"));
}

// Audio then visual rows of each sequence, back to back.
std::pair<Var, PackedLayout> concat_time(const Memory& m) {
  if (m.audio_layout.batch() != m.visual_layout.batch()) {
    throw DimensionError("concat_time: batch sizes differ");
  }
  const Var both = ag::concat_rows(m.audio, m.visual);
  const std::size_t audio_rows = m.audio.value().rows();
  std::vector<std::size_t> index;
  std::vector<std::size_t> lengths;
  for (std::size_t b = 0; b < m.audio_layout.batch(); ++b) {
    for (std::size_t i = 0; i < m.audio_layout.lengths[b]; ++i) {
      index.push_back(m.audio_layout.offsets[b] + i);
    }
    for (std::size_t i = 0; i < m.visual_layout.lengths[b]; ++i) {
      index.push_back(audio_rows + m.visual_layout.offsets[b] + i);
    }
    lengths.push_back(m.audio_layout.lengths[b] + m.visual_layout.lengths[b]);
  }
  return {ag::gather_rows(both, index), PackedLayout::from_lengths(lengths)};
}

}  // namespace

Var audio_encode(BoundParameters& bp, const ModelConfig& cfg, const Var& patches,
                 const PackedLayout& layout, ForwardContext& ctx) {
  if (patches.value().cols() != cfg.audio_in_dim) {
    throw DimensionError("audio_encode: patch width " + std::to_string(patches.value().cols()) +
                         " but audio_in_dim is " + std::to_string(cfg.audio_in_dim));
  }
  std::vector<std::size_t> positions;
  positions.reserve(layout.total);
  for (std::size_t b = 0; b < layout.batch(); ++b) {
    if (layout.lengths[b] > cfg.max_audio_len) {
      throw LengthError("audio sequence of " + std::to_string(layout.lengths[b]) +
                        " patches exceeds the positional table (" + std::to_string(cfg.max_audio_len) +
                        ")");
    }
    for (std::size_t i = 0; i < layout.lengths[b]; ++i) positions.push_back(i);
  }
  Var x = ag::add(ag::linear(patches, bp("audio.patch.weight"), bp("audio.patch.bias")),
                  ag::gather_rows(bp("audio.pos"), positions));
  const AttentionLayout attn = self_layout(layout, false);
  const double p = ctx.dropout(cfg);
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    const std::string pre = "audio.block" + std::to_string(i);
    const Var a = layer_norm_named(bp, pre + ".ln1", x, cfg.ln_eps);
    x = ag::add(x, attention_sublayer(a, a, bind_attention(bp, pre + ".attn"), attn, cfg.heads, p,
                                      ctx.rng));
    x = ag::add(x, mlp(bp, pre + ".mlp", layer_norm_named(bp, pre + ".ln2", x, cfg.ln_eps), p,
                       ctx.rng));
  }
  if (cfg.encoder_blocks > 0) x = layer_norm_named(bp, "audio.ln_f", x, cfg.ln_eps);
  return x;
}

Var visual_project(BoundParameters& bp, const ModelConfig& cfg, const Var& raw) {
  if (raw.value().cols() != cfg.visual_in_dim) {
    throw DimensionError("visual_project: feature width " + std::to_string(raw.value().cols()) +
                         " but visual_in_dim is " + std::to_string(cfg.visual_in_dim));
  }
  return ag::linear(raw, bp("visual.proj.weight"), bp("visual.proj.bias"));
}

Var decoder_self_attend(BoundParameters& bp, const ModelConfig& cfg, std::size_t block,
                        const Var& x, const PackedLayout& text, ForwardContext& ctx) {
  for (std::size_t len : text.lengths) {
    if (len == 0) throw DomainError("decoder_self_attend: empty prefix");
  }
  const std::string pre = "decoder.block" + std::to_string(block);
  const Var a = layer_norm_named(bp, pre + ".ln_self", x, cfg.ln_eps);
  return ag::add(x, attention_sublayer(a, a, bind_attention(bp, pre + ".self_attn"),
                                       self_layout(text, true), cfg.heads, ctx.dropout(cfg),
                                       ctx.rng));
}

Var cross_attend(const Var& queries, const Var& memory, const AttentionParams& params,
                 const PackedLayout& text, const PackedLayout& memory_layout, std::size_t heads,
                 double dropout, std::mt19937_64* rng) {
  if (text.batch() != memory_layout.batch()) {
    throw DimensionError("cross_attend: " + std::to_string(text.batch()) + " query sequences but " +
                         std::to_string(memory_layout.batch()) + " memories");
  }
  AttentionLayout layout;
  for (std::size_t b = 0; b < text.batch(); ++b) {
    if (memory_layout.lengths[b] == 0) {
      throw DomainError("cross_attend: memory " + std::to_string(b) + " has no rows");
    }
    layout.segments.push_back(
        {text.offsets[b], text.lengths[b], memory_layout.offsets[b], memory_layout.lengths[b]});
  }
  return attention_sublayer(queries, memory, params, layout, heads, dropout, rng);
}

Var confidence(const Var& primary_cross, const Var& hidden, const Var& weight, const Var& bias) {
  if (primary_cross.shape() != hidden.shape()) {
    throw DimensionError("confidence: " + shape_to_string(primary_cross.shape()) + " vs " +
                         shape_to_string(hidden.shape()));
  }
  return ag::sigmoid(ag::linear(ag::concat_cols(primary_cross, hidden), weight, bias));
}

Tensor threshold_mask(const Tensor& x, double beta) {
  Tensor m(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) m[i] = x[i] > beta ? 1.0 : 0.0;
  return m;
}

Var adaava_fuse(const Var& a_cross, const Var& v_cross, const Var& a_conf, double beta,
                AdaAVATrace* trace) {
  if (a_cross.shape() != v_cross.shape() || a_cross.shape() != a_conf.shape()) {
    throw DimensionError("adaava_fuse: shapes " + shape_to_string(a_cross.shape()) + ", " +
                         shape_to_string(v_cross.shape()) + ", " + shape_to_string(a_conf.shape()));
  }
  const Tensor c = a_conf.value();
  Tensor rest(c.shape());
  for (std::size_t i = 0; i < c.numel(); ++i) rest[i] = 1.0 - c[i];
  Tensor mask_a = threshold_mask(c, beta);
  Tensor mask_v = threshold_mask(rest, beta);
  const Var audio_term = ag::mul_const(ag::mul(a_conf, a_cross), mask_a);
  const Var visual_term = ag::mul_const(ag::mul(ag::one_minus(a_conf), v_cross), mask_v);
  const Var out = ag::add(audio_term, visual_term);
  if (trace) {
    trace->a_cross = a_cross.value();
    trace->v_cross = v_cross.value();
    trace->a_conf = c;
    trace->mask_audio = std::move(mask_a);
    trace->mask_visual = std::move(mask_v);
    trace->av_out = out.value();
  }
  return out;
}

Var decoder_block(BoundParameters& bp, const ModelConfig& cfg, std::size_t block, const Var& x,
                  const Memory& memory, const PackedLayout& text, ForwardContext& ctx) {
  const std::string pre = "decoder.block" + std::to_string(block);
  const double p = ctx.dropout(cfg);
  const bool need_audio = uses_audio(cfg.fusion_mode);
  const bool need_visual = uses_visual(cfg.fusion_mode) && cfg.fusion_mode != FusionMode::kConcatenate;
  if (need_audio && !memory.audio.valid()) {
    throw ConfigError(std::string(to_string(cfg.fusion_mode)) + " requires audio features");
  }
  if (need_visual && !memory.visual.valid()) {
    throw ConfigError(std::string(to_string(cfg.fusion_mode)) + " requires visual features");
  }

  const Var hidden = decoder_self_attend(bp, cfg, block, x, text, ctx);
  const Var queries = layer_norm_named(bp, pre + ".ln_cross", hidden, cfg.ln_eps);
  Var fused;
  switch (cfg.fusion_mode) {
    case FusionMode::kAudioOnly:
      fused = ag::add(hidden, cross_attend(queries, memory.audio, bind_attention(bp, pre + ".cross"),
                                           text, memory.audio_layout, cfg.heads, p, ctx.rng));
      break;
    case FusionMode::kVideoOnly:
      fused = ag::add(hidden, cross_attend(queries, memory.visual, bind_attention(bp, pre + ".cross"),
                                           text, memory.visual_layout, cfg.heads, p, ctx.rng));
      break;
    case FusionMode::kConcatenate: {
      if (!memory.visual.valid()) {
        fused = ag::add(hidden, cross_attend(queries, memory.audio, bind_attention(bp, pre + ".cross"),
                                             text, memory.audio_layout, cfg.heads, p, ctx.rng));
        break;
      }
      const auto [joined, joined_layout] = concat_time(memory);
      fused = ag::add(hidden, cross_attend(queries, joined, bind_attention(bp, pre + ".cross"), text,
                                           joined_layout, cfg.heads, p, ctx.rng));
      break;
    }
    case FusionMode::kAdaavaAudio:
    case FusionMode::kAdaavaVideo: {
      const Var a_cross = cross_attend(queries, memory.audio, bind_attention(bp, pre + ".cross_audio"),
                                       text, memory.audio_layout, cfg.heads, p, ctx.rng);
      const Var v_cross = cross_attend(queries, memory.visual,
                                       bind_attention(bp, pre + ".cross_visual"), text,
                                       memory.visual_layout, cfg.heads, p, ctx.rng);
      const Var& primary = cfg.fusion_mode == FusionMode::kAdaavaAudio ? a_cross : v_cross;
      const Var conf = confidence(primary, hidden, bp(pre + ".conf.weight"), bp(pre + ".conf.bias"));
      if (ctx.traces) {
        AdaAVATrace trace;
        fused = adaava_fuse(a_cross, v_cross, conf, cfg.beta, &trace);
        trace.hidden = hidden.value();
        ctx.traces->push_back(std::move(trace));
      } else {
        fused = adaava_fuse(a_cross, v_cross, conf, cfg.beta);
      }
      break;
    }
  }
  return ag::add(fused, mlp(bp, pre + ".mlp", layer_norm_named(bp, pre + ".ln_mlp", fused, cfg.ln_eps),
                            p, ctx.rng));
}

}  // namespace avfuse
