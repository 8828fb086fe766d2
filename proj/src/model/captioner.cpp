// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/captioner.hpp"

#include <cmath>
#include <random>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

void add_attention(std::vector<ParameterSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    out.push_back({prefix + "." + w, {d, d}, InitKind::kXavier});
    out.push_back({prefix + ".b" + std::string(1, w[1]), {d}, InitKind::kZeros});
  }
}

void add_norm(std::vector<ParameterSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", {d}, InitKind::kOnes});
  out.push_back({prefix + ".bias", {d}, InitKind::kZeros});
}

void add_mlp(std::vector<ParameterSpec>& out, const std::string& prefix, std::size_t d,
             std::size_t hidden) {
  out.push_back({prefix + ".w1", {d, hidden}, InitKind::kXavier});
  out.push_back({prefix + ".b1", {hidden}, InitKind::kZeros});
  out.push_back({prefix + ".w2", {hidden, d}, InitKind::kXavier});
  out.push_back({prefix + ".b2", {d}, InitKind::kZeros});
}

Tensor pack_rows(std::span<const Tensor* const> parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const Tensor* t : parts) rows += t->rows();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Tensor* t : parts) data.insert(data.end(), t->storage().begin(), t->storage().end());
  return Tensor(Shape{rows, cols}, std::move(data));
}

}  // namespace

std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d;
  const std::size_t h = cfg.mlp_hidden();
  std::vector<ParameterSpec> out;
  if (uses_audio(cfg.fusion_mode)) {
    out.push_back({"audio.patch.weight", {cfg.audio_in_dim, d}, InitKind::kXavier});
    out.push_back({"audio.patch.bias", {d}, InitKind::kZeros});
    out.push_back({"audio.pos", {cfg.max_audio_len, d}, InitKind::kNormal, 0.02});
    for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
      const std::string pre = "audio.block" + std::to_string(i);
      add_norm(out, pre + ".ln1", d);
      add_attention(out, pre + ".attn", d);
      add_norm(out, pre + ".ln2", d);
      add_mlp(out, pre + ".mlp", d, h);
    }
    if (cfg.encoder_blocks > 0) add_norm(out, "audio.ln_f", d);
  }
  if (uses_visual(cfg.fusion_mode)) {
    out.push_back({"visual.proj.weight", {cfg.visual_in_dim, d}, InitKind::kXavier});
    out.push_back({"visual.proj.bias", {d}, InitKind::kZeros});
  }
  out.push_back({"decoder.embed", {cfg.vocab_size, d}, InitKind::kNormal,
                 1.0 / std::sqrt(static_cast<double>(d))});
  out.push_back({"decoder.pos", {cfg.max_caption_len, d}, InitKind::kNormal, 0.02});
  for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) {
    const std::string pre = "decoder.block" + std::to_string(i);
    add_norm(out, pre + ".ln_self", d);
    add_attention(out, pre + ".self_attn", d);
    add_norm(out, pre + ".ln_cross", d);
    if (is_adaava(cfg.fusion_mode)) {
      add_attention(out, pre + ".cross_audio", d);
      add_attention(out, pre + ".cross_visual", d);
      out.push_back({pre + ".conf.weight", {2 * d, d}, InitKind::kXavier});
      out.push_back({pre + ".conf.bias", {d}, InitKind::kZeros});
    } else {
      add_attention(out, pre + ".cross", d);
    }
    add_norm(out, pre + ".ln_mlp", d);
    add_mlp(out, pre + ".mlp", d, h);
  }
  add_norm(out, "decoder.ln_f", d);
  out.push_back({"decoder.out.weight", {d, cfg.vocab_size}, InitKind::kXavier});
  out.push_back({"decoder.out.bias", {cfg.vocab_size}, InitKind::kZeros});
  return out;
}

ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore store;
  for (const ParameterSpec& spec : parameter_layout(cfg)) {
    Tensor t(spec.shape);
    double std = 0.0;
    switch (spec.init) {
      case InitKind::kZeros: break;
      case InitKind::kOnes:
        for (double& v : t.data()) v = 1.0;
        break;
      case InitKind::kXavier:
        std = std::sqrt(2.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        break;
      case InitKind::kNormal: std = spec.std; break;
    }
    if (std > 0.0) {
      std::mt19937_64 rng(name_seed(seed, spec.name));
      std::normal_distribution<double> dist(0.0, std);
      for (double& v : t.data()) v = dist(rng);
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

std::vector<std::string> parameter_mismatches(const ModelConfig& cfg, const ParameterStore& store) {
  std::vector<std::string> out;
  const auto layout = parameter_layout(cfg);
  std::unordered_map<std::string, bool> expected;
  for (const ParameterSpec& spec : layout) {
    expected[spec.name] = true;
    if (!store.contains(spec.name)) {
      out.push_back(spec.name + ": missing (expected " + shape_to_string(spec.shape) + ")");
    } else if (store.get(spec.name).shape() != spec.shape) {
      out.push_back(spec.name + ": shape " + shape_to_string(store.get(spec.name).shape()) +
                    " but config expects " + shape_to_string(spec.shape));
    }
  }
  for (const auto& [name, t] : store) {
    if (!expected.count(name)) out.push_back(name + ": not used by this config");
  }
  return out;
}

Captioner::Captioner(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_parameters(config_, seed)) {}

Captioner::Captioner(ModelConfig config, ParameterStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto problems = parameter_mismatches(config_, params_);
  if (!problems.empty()) {
    std::string msg = "parameter mismatch at " + problems.front();
    if (problems.size() > 1) {
      msg += "\nall mismatches:";
      for (const auto& p : problems) msg += "\n  " + p;
    }
    throw ValidationError(msg);
  }
}

void Captioner::check_input(const ModalityInput& input, std::size_t index) const {
  const std::string where = "input " + std::to_string(index) + ": ";
  const FusionMode mode = config_.fusion_mode;
  if (uses_audio(mode)) {
    if (input.audio.rows() == 0) {
      throw ConfigError(where + std::string(to_string(mode)) + " requires audio features");
    }
    if (input.audio.cols() != config_.audio_in_dim) {
      throw DimensionError(where + "audio width " + std::to_string(input.audio.cols()) +
                           " but audio_in_dim is " + std::to_string(config_.audio_in_dim));
    }
    if (input.audio.rows() > config_.max_audio_len) {
      throw LengthError(where + std::to_string(input.audio.rows()) +
                        " audio patches exceed the positional table (" +
                        std::to_string(config_.max_audio_len) + ")");
    }
  }
  if (uses_visual(mode)) {
    const bool optional = mode == FusionMode::kConcatenate;
    if (input.visual.rows() == 0 && !optional) {
      throw ConfigError(where + std::string(to_string(mode)) + " requires visual features");
    }
    if (input.visual.rows() > 0 && input.visual.cols() != config_.visual_in_dim) {
      throw DimensionError(where + "visual width " + std::to_string(input.visual.cols()) +
                           " but visual_in_dim is " + std::to_string(config_.visual_in_dim));
    }
  }
}

Memory Captioner::encode_memory(BoundParameters& bp, std::span<const ModalityInput> inputs,
                                ForwardContext& ctx) const {
  Tape& tape = bp.tape();
  Memory m;
  std::vector<std::size_t> a_len, v_len;
  std::vector<const Tensor*> a_parts, v_parts;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    check_input(inputs[b], b);
    a_len.push_back(inputs[b].audio.rows());
    v_len.push_back(inputs[b].visual.rows());
    if (inputs[b].audio.rows() > 0) a_parts.push_back(&inputs[b].audio);
    if (inputs[b].visual.rows() > 0) v_parts.push_back(&inputs[b].visual);
  }
  if (uses_audio(config_.fusion_mode)) {
    m.audio_layout = PackedLayout::from_lengths(a_len);
    const Var patches = tape.constant(pack_rows(a_parts, config_.audio_in_dim));
    m.audio = audio_encode(bp, config_, patches, m.audio_layout, ctx);
  }
  if (uses_visual(config_.fusion_mode)) {
    m.visual_layout = PackedLayout::from_lengths(v_len);
    if (m.visual_layout.total > 0) {
      m.visual = visual_project(bp, config_, tape.constant(pack_rows(v_parts, config_.visual_in_dim)));
    }
  }
  return m;
}

Var Captioner::decode(BoundParameters& bp, const Memory& memory,
                      std::span<const std::vector<int>> prefixes, const PackedLayout& text,
                      ForwardContext& ctx) const {
  std::vector<std::size_t> tokens, positions;
  tokens.reserve(text.total);
  positions.reserve(text.total);
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    const auto& p = prefixes[b];
    if (p.empty()) throw DomainError("prefix " + std::to_string(b) + " is empty");
    if (p.size() > config_.max_caption_len) {
      throw LengthError("prefix " + std::to_string(b) + " has " + std::to_string(p.size()) +
                        " tokens, limit " + std::to_string(config_.max_caption_len));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < 0 || static_cast<std::size_t>(p[i]) >= config_.vocab_size) {
        throw ValidationError("prefix " + std::to_string(b) + ": token id " + std::to_string(p[i]) +
                              " outside vocabulary of " + std::to_string(config_.vocab_size));
      }
      tokens.push_back(static_cast<std::size_t>(p[i]));
      positions.push_back(i);
    }
  }
  Var x = ag::add(ag::gather_rows(bp("decoder.embed"), tokens),
                  ag::gather_rows(bp("decoder.pos"), positions));
  for (std::size_t i = 0; i < config_.decoder_blocks; ++i) {
    x = decoder_block(bp, config_, i, x, memory, text, ctx);
  }
  x = layer_norm_named(bp, "decoder.ln_f", x, config_.ln_eps);
  return ag::linear(x, bp("decoder.out.weight"), bp("decoder.out.bias"));
}

Var Captioner::packed_logits(BoundParameters& bp, std::span<const ModalityInput> inputs,
                             std::span<const std::vector<int>> prefixes, ForwardContext& ctx,
                             PackedLayout* text_layout) const {
  if (inputs.size() != prefixes.size()) {
    throw DimensionError("packed_logits: " + std::to_string(inputs.size()) + " inputs but " +
                         std::to_string(prefixes.size()) + " prefixes");
  }
  std::vector<std::size_t> lengths;
  for (const auto& p : prefixes) lengths.push_back(p.size());
  const PackedLayout text = PackedLayout::from_lengths(lengths);
  const Memory memory = encode_memory(bp, inputs, ctx);
  if (text_layout) *text_layout = text;
  return decode(bp, memory, prefixes, text, ctx);
}

Tensor Captioner::forward(std::span<const ModalityInput> inputs,
                          const std::vector<std::vector<int>>& padded_prefixes,
                          std::span<const std::size_t> lengths) const {
  if (inputs.size() != padded_prefixes.size() || inputs.size() != lengths.size()) {
    throw DimensionError("forward: batch sizes of inputs, prefixes and lengths differ");
  }
  std::vector<std::vector<int>> prefixes;
  std::size_t max_len = 0;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (lengths[b] > padded_prefixes[b].size()) {
      throw DimensionError("forward: length " + std::to_string(lengths[b]) + " exceeds prefix " +
                           std::to_string(b) + " of size " + std::to_string(padded_prefixes[b].size()));
    }
    prefixes.emplace_back(padded_prefixes[b].begin(),
                          padded_prefixes[b].begin() + static_cast<std::ptrdiff_t>(lengths[b]));
    max_len = std::max(max_len, padded_prefixes[b].size());
  }
  Tensor logits;
  PackedLayout text;
  try {
    Tape tape;
    BoundParameters bp(tape, params_, false);
    ForwardContext ctx;
    logits = packed_logits(bp, inputs, prefixes, ctx, &text).value();
  } catch (const NumericalError& e) {
    // Find the first example that fails on its own.
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      try {
        Tape tape;
        BoundParameters bp(tape, params_, false);
        ForwardContext ctx;
        packed_logits(bp, inputs.subspan(b, 1), std::span(prefixes).subspan(b, 1), ctx);
      } catch (const NumericalError& inner) {
        throw NumericalError("batch index " + std::to_string(b) + ": " + inner.what());
      }
    }
    throw;
  }
  const std::size_t v = config_.vocab_size;
  Tensor out(Shape{inputs.size(), max_len, v});
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    for (std::size_t i = 0; i < text.lengths[b]; ++i) {
      std::copy_n(logits.row(text.offsets[b] + i), v, out.data().data() + (b * max_len + i) * v);
    }
  }
  return out;
}

EncodedModalities Captioner::encode(const ModalityInput& input) const {
  Tape tape;
  BoundParameters bp(tape, params_, false);
  ForwardContext ctx;
  const Memory m = encode_memory(bp, std::span(&input, 1), ctx);
  EncodedModalities enc;
  if (m.audio.valid()) enc.audio = m.audio.value();
  if (m.visual.valid()) enc.visual = m.visual.value();
  return enc;
}

Tensor Captioner::next_token_logits(const EncodedModalities& enc,
                                    std::span<const std::vector<int>> prefixes,
                                    std::vector<AdaAVATrace>* traces) const {
  Tape tape;
  BoundParameters bp(tape, params_, false);
  ForwardContext ctx;
  ctx.traces = traces;
  const std::size_t batch = prefixes.size();
  Memory m;
  if (enc.audio.numel() > 0) {
    m.audio = tape.constant(enc.audio);
    m.audio_layout = PackedLayout::shared(batch, enc.audio.rows());
  }
  if (enc.visual.numel() > 0) {
    m.visual = tape.constant(enc.visual);
    m.visual_layout = PackedLayout::shared(batch, enc.visual.rows());
  } else {
    m.visual_layout = PackedLayout::shared(batch, 0);
  }
  std::vector<std::size_t> lengths;
  for (const auto& p : prefixes) lengths.push_back(p.size());
  const PackedLayout text = PackedLayout::from_lengths(lengths);
  const Tensor logits = decode(bp, m, prefixes, text, ctx).value();
  const std::size_t v = config_.vocab_size;
  Tensor out(Shape{batch, v});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(logits.row(text.offsets[b] + text.lengths[b] - 1), v, out.row(b));
  }
  return out;
}

}  // namespace avfuse
