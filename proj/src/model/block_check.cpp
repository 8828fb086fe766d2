// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/block_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "avfuse/errors.hpp"
#include "avfuse/model/captioner.hpp"
#include "avfuse/numerics/gradcheck.hpp"

namespace avfuse {

namespace {

Tensor normal(std::mt19937_64& rng, Shape shape, double std) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

struct Fixture {
  ModelConfig cfg;
  ParameterStore params;  // block 0 parameters only
  Tensor x, audio, visual, readout;
  PackedLayout text, audio_layout, visual_layout;

  // Scalar read-out of the block with `name` replaced by `point`.
  Var run(Tape& tape, const std::string& name, const Var& point, std::vector<AdaAVATrace>* traces) const {
    BoundParameters bp(tape, params, false);
    Var xv = tape.constant(x);
    Memory m;
    m.audio_layout = audio_layout;
    m.visual_layout = visual_layout;
    if (audio.numel() > 0) m.audio = tape.constant(audio);
    if (visual.numel() > 0) m.visual = tape.constant(visual);
    if (name == "input.x") xv = point;
    else if (name == "memory.audio") m.audio = point;
    else if (name == "memory.visual") m.visual = point;
    else bp.override(name, point);
    ForwardContext ctx;
    ctx.traces = traces;
    return ag::weighted_sum(decoder_block(bp, cfg, 0, xv, m, text, ctx), readout);
  }

  Tensor value_of(const std::string& name) const {
    if (name == "input.x") return x;
    if (name == "memory.audio") return audio;
    if (name == "memory.visual") return visual;
    return params.get(name);
  }

  std::vector<Tensor> confidences(const std::string& name, const Tensor& point) const {
    Tape tape;
    std::vector<AdaAVATrace> traces;
    run(tape, name, tape.constant(point), &traces);
    std::vector<Tensor> out;
    for (auto& t : traces) out.push_back(std::move(t.a_conf));
    return out;
  }
};

bool near_threshold(const std::vector<Tensor>& confs, double beta, double band) {
  for (const Tensor& c : confs) {
    for (double v : c.data()) {
      if (std::abs(v - beta) <= band || std::abs(1.0 - v - beta) <= band) return true;
    }
  }
  return false;
}

Fixture make_fixture(const BlockCheckOptions& o, std::mt19937_64& rng) {
  Fixture f;
  f.cfg = o.config;
  f.cfg.decoder_blocks = 1;
  f.cfg.encoder_blocks = 0;
  f.cfg.dropout = 0.0;
  const std::size_t d = f.cfg.d;
  const ParameterStore full = init_parameters(f.cfg, o.seed);
  for (const auto& [name, t] : full) {
    if (!name.starts_with("decoder.block0.")) continue;
    // Perturb so that biases and norm affines are generic.
    Tensor v = t;
    std::normal_distribution<double> dist(0.0, 0.05);
    for (double& e : v.data()) e += dist(rng);
    f.params.add(name, std::move(v));
  }
  f.x = normal(rng, {o.text_len, d}, 1.0);
  if (uses_audio(f.cfg.fusion_mode)) f.audio = normal(rng, {o.audio_len, d}, 1.0);
  if (uses_visual(f.cfg.fusion_mode)) f.visual = normal(rng, {o.visual_len, d}, 1.0);
  f.readout = normal(rng, {o.text_len, d}, 1.0);
  const std::size_t one_text[] = {o.text_len};
  f.text = PackedLayout::from_lengths(one_text);
  f.audio_layout = PackedLayout::shared(1, f.audio.rows());
  f.visual_layout = PackedLayout::shared(1, f.visual.rows());
  return f;
}

}  // namespace

std::vector<GroupCheck> check_decoder_block_gradients(const BlockCheckOptions& o) {
  o.config.validate();
  const bool adaptive = is_adaava(o.config.fusion_mode);
  std::mt19937_64 rng(o.seed ^ 0x5eedb10cull);

  Fixture f = make_fixture(o, rng);
  if (adaptive && !o.near_threshold) {
    for (int attempt = 0; near_threshold(f.confidences("input.x", f.x), f.cfg.beta, o.band); ++attempt) {
      if (attempt >= 50) throw NumericalError("could not draw a probe point clear of the mask thresholds");
      f = make_fixture(o, rng);
    }
  }
  if (adaptive && o.near_threshold) {
    // Shift one confidence bias so entry (0, 0) sits just above beta.
    const Tensor c = f.confidences("input.x", f.x).front();
    const double target = f.cfg.beta + 1e-8;
    const double z = std::log(c[0] / (1.0 - c[0]));
    Tensor& bias = f.params.get_mutable("decoder.block0.conf.bias");
    bias[0] += std::log(target / (1.0 - target)) - z;
  }

  std::vector<std::string> groups = f.params.names();
  groups.push_back("input.x");
  if (f.audio.numel() > 0) groups.push_back("memory.audio");
  if (f.visual.numel() > 0) groups.push_back("memory.visual");

  std::vector<GroupCheck> out;
  for (const std::string& name : groups) {
    const Tensor point = f.value_of(name);
    std::vector<std::size_t> coords(point.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (o.coords_per_group > 0 && coords.size() > o.coords_per_group) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(o.coords_per_group);
      std::sort(coords.begin(), coords.end());
    }
    // The planted near-threshold entry depends on the bias coordinate 0.
    if (o.near_threshold && name == "decoder.block0.conf.bias" &&
        std::find(coords.begin(), coords.end(), 0) == coords.end()) {
      coords.front() = 0;
      std::sort(coords.begin(), coords.end());
    }
    ExclusionPredicate exclude;
    if (adaptive && o.exclusion) {
      exclude = [&, name](std::size_t c) {
        Tensor probe = point;
        for (double delta : {o.step, -o.step}) {
          probe[c] = point[c] + delta;
          if (near_threshold(f.confidences(name, probe), f.cfg.beta, o.band)) return true;
        }
        return false;
      };
    }
    const ScalarFunction fn = [&f, name](Tape& tape, const Var& p) { return f.run(tape, name, p, nullptr); };
    const GradcheckResult r = gradcheck(fn, point, o.step, exclude, coords);
    std::string group = name;
    if (group.starts_with("decoder.block0.")) group = group.substr(15);
    out.push_back({group, r.max_rel_error, r.checked, r.excluded});
  }
  return out;
}

}  // namespace avfuse
