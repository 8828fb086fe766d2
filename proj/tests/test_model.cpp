// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <random>

#include "avfuse/errors.hpp"
#include "avfuse/model/block_check.hpp"
#include "avfuse/model/captioner.hpp"
#include "avfuse/model/checkpoint.hpp"
#include "avfuse/model/layers.hpp"
#include "avfuse/numerics/kernels.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace avfuse;
using avfuse::testing::random_tensor;
using avfuse::testing::random_uniform;

namespace {

ModelConfig small_config(FusionMode mode) {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.encoder_blocks = 1;
  c.decoder_blocks = 2;
  c.vocab_size = 9;
  c.audio_in_dim = 12;
  c.visual_in_dim = 10;
  c.max_audio_len = 8;
  c.max_caption_len = 8;
  c.fusion_mode = mode;
  return c;
}

ModalityInput random_input(std::mt19937_64& rng, const ModelConfig& c, std::size_t ta, std::size_t tv) {
  return {random_tensor(rng, {ta, c.audio_in_dim}), random_tensor(rng, {tv, c.visual_in_dim})};
}

double sigmoid_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("model config validates and round-trips through JSON") {
  ModelConfig c = small_config(FusionMode::kAdaavaVideo);
  c.beta = 0.25;
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  CHECK(ModelConfig::full_scale().d == 512);
  CHECK(ModelConfig::full_scale().heads == 8);
  CHECK(ModelConfig::full_scale().decoder_blocks == 4);
  CHECK(ModelConfig::full_scale().beta == 0.13);

  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.beta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"dd", 3}}), ConfigError);
  CHECK_THROWS_AS(parse_fusion_mode("early_fusion"), ConfigError);
  for (FusionMode m : {FusionMode::kAudioOnly, FusionMode::kVideoOnly, FusionMode::kConcatenate,
                       FusionMode::kAdaavaAudio, FusionMode::kAdaavaVideo}) {
    CHECK(parse_fusion_mode(to_string(m)) == m);
  }
}

TEST_CASE("threshold mask is a strict comparison") {
  const Tensor x = Tensor::from_rows({{0.5, 0.1}, {0.13, 0.9}});
  const Tensor m = threshold_mask(x, 0.13);
  CHECK(m == Tensor::from_rows({{1, 0}, {0, 1}}));

  std::mt19937_64 rng(3);
  const Tensor u = random_uniform(rng, {6, 7}, 1e-6, 1.0 - 1e-6);
  const Tensor m0 = threshold_mask(u, 0.0);
  for (double v : m0.data()) CHECK(v == 1.0);
  const Tensor m13 = threshold_mask(u, 0.13);
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(m13[i] == (u[i] > 0.13 ? 1.0 : 0.0));
}

TEST_CASE("adaava fusion examples") {
  Tape tape;
  std::mt19937_64 rng(5);
  const Var a = tape.constant(random_tensor(rng, {3, 4}));
  const Var v = tape.constant(random_tensor(rng, {3, 4}));
  const Var half = tape.constant(Tensor({3, 4}, 0.5));

  AdaAVATrace tr;
  const Var out = adaava_fuse(a, v, half, 0.13, &tr);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(tr.mask_audio[i] == 1.0);
    CHECK(tr.mask_visual[i] == 1.0);
    CHECK(out.value()[i] == 0.5 * a.value()[i] + 0.5 * v.value()[i]);
  }
  const Var dead = adaava_fuse(a, v, half, 0.6);
  for (double x : dead.value().data()) CHECK(x == 0.0);

  const Var conf = tape.constant(random_uniform(rng, {3, 4}, 1e-9, 1.0 - 1e-9));
  for (double x : adaava_fuse(a, v, conf, 1.0).value().data()) CHECK(x == 0.0);

  const Var wrong = tape.constant(Tensor({2, 4}, 0.5));
  CHECK_THROWS_AS(adaava_fuse(a, v, wrong, 0.13), DimensionError);
}

TEST_CASE("adaava trace satisfies mask predicates and the fusion identity") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng() % 8;
    const double beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Tape tape;
    const Var a = tape.constant(random_tensor(rng, {rows, 16}));
    const Var v = tape.constant(random_tensor(rng, {rows, 16}));
    const Var conf = ag::sigmoid(tape.constant(random_tensor(rng, {rows, 16}, 3.0)));
    AdaAVATrace tr;
    adaava_fuse(a, v, conf, beta, &tr);
    for (std::size_t i = 0; i < rows * 16; ++i) {
      const double c = tr.a_conf[i];
      REQUIRE(tr.mask_audio[i] == (c > beta ? 1.0 : 0.0));
      REQUIRE(tr.mask_visual[i] == ((1.0 - c) > beta ? 1.0 : 0.0));
      const double expect = c * tr.a_cross[i] * tr.mask_audio[i] + (1.0 - c) * tr.v_cross[i] * tr.mask_visual[i];
      REQUIRE(std::abs(tr.av_out[i] - expect) <= 1e-12);
      if (beta < 0.5) REQUIRE((tr.mask_audio[i] + tr.mask_visual[i]) >= 1.0);
      const bool both_zero = tr.mask_audio[i] == 0.0 && tr.mask_visual[i] == 0.0;
      REQUIRE(both_zero == (c <= beta && 1.0 - c <= beta));
      if (both_zero) REQUIRE(tr.av_out[i] == 0.0);
    }
  }
}

TEST_CASE("adaava gating is monotone within a mask regime") {
  Tape tape;
  const Var a = tape.constant(Tensor({1, 1}, 0.7));
  const Var v = tape.constant(Tensor({1, 1}, 0.4));
  double prev_audio = -1.0, prev_visual = 2.0;
  for (double c = 0.2; c <= 0.8; c += 0.05) {
    AdaAVATrace tr;
    adaava_fuse(a, v, tape.constant(Tensor({1, 1}, c)), 0.13, &tr);
    const double audio_term = c * 0.7 * tr.mask_audio[0];
    const double visual_term = (1.0 - c) * 0.4 * tr.mask_visual[0];
    CHECK(audio_term >= prev_audio);
    CHECK(visual_term <= prev_visual);
    prev_audio = audio_term;
    prev_visual = visual_term;
  }
}

TEST_CASE("confidence examples") {
  std::mt19937_64 rng(17);
  Tape tape;
  const Var x = tape.constant(random_tensor(rng, {4, 6}));
  const Var h = tape.constant(random_tensor(rng, {4, 6}));
  const Var zw = tape.constant(Tensor({12, 6}));
  for (double c : confidence(x, h, zw, tape.constant(Tensor({6}))).value().data()) CHECK(c == 0.5);
  for (double c : confidence(x, h, zw, tape.constant(Tensor({6}, 50.0))).value().data()) {
    CHECK(c > 1.0 - 1e-9);
    CHECK(c <= 1.0);
  }
  const Tensor w = random_tensor(rng, {12, 6}, 0.3);
  const Tensor b = random_tensor(rng, {6}, 0.3);
  const Tensor out = confidence(x, h, tape.constant(w), tape.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double z = b[j];
      for (std::size_t k = 0; k < 6; ++k) z += x.value()(i, k) * w(k, j) + h.value()(i, k) * w(6 + k, j);
      CHECK(std::abs(out(i, j) - sigmoid_ref(z)) < 1e-12);
    }
  CHECK_THROWS_AS(confidence(x, tape.constant(Tensor({3, 6})), zw, tape.constant(Tensor({6}))),
                  DimensionError);
}

TEST_CASE("visual projection") {
  ModelConfig c = small_config(FusionMode::kVideoOnly);
  c.visual_in_dim = c.d;
  ParameterStore p = init_parameters(c, 1);
  std::mt19937_64 rng(2);
  const Tensor raw = random_tensor(rng, {5, c.d});
  {
    p.get_mutable("visual.proj.weight") = Tensor::identity(c.d);
    Tape tape;
    BoundParameters bp(tape, p, false);
    CHECK(bit_equal(visual_project(bp, c, tape.constant(raw)).value(), raw));
  }
  const Tensor w = random_tensor(rng, {c.d, c.d});
  const Tensor b = random_tensor(rng, {c.d});
  p.get_mutable("visual.proj.weight") = w;
  p.get_mutable("visual.proj.bias") = b;
  Tape tape;
  BoundParameters bp(tape, p, false);
  const Tensor zero_out = visual_project(bp, c, tape.constant(Tensor({3, c.d}))).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < c.d; ++j) CHECK(zero_out(i, j) == b[j]);
  const Tensor out = visual_project(bp, c, tape.constant(raw)).value();
  const Tensor ref = linear(raw, w, b);
  CHECK(max_abs_diff(out, ref) < 1e-12);
  CHECK_THROWS_AS(visual_project(bp, c, tape.constant(Tensor({3, c.d + 1}))), DimensionError);
}

TEST_CASE("audio encoder contracts") {
  ModelConfig c = small_config(FusionMode::kAudioOnly);
  std::mt19937_64 rng(4);
  const Tensor patches = random_tensor(rng, {5, c.audio_in_dim});
  const std::size_t len[] = {5};
  const PackedLayout layout = PackedLayout::from_lengths(len);
  ForwardContext ctx;

  const ParameterStore p = init_parameters(c, 9);
  Tape tape;
  BoundParameters bp(tape, p, false);
  const Tensor out = audio_encode(bp, c, tape.constant(patches), layout, ctx).value();
  CHECK(out.shape() == Shape{5, c.d});

  // Swapping two patches changes more than a row permutation would.
  Tensor swapped = patches;
  std::swap_ranges(swapped.row(0), swapped.row(0) + c.audio_in_dim, swapped.row(1));
  const Tensor out2 = audio_encode(bp, c, tape.constant(swapped), layout, ctx).value();
  double diff = 0.0;
  for (std::size_t j = 0; j < c.d; ++j) diff += std::abs(out2(0, j) - out(1, j));
  CHECK(diff > 1e-6);

  ModelConfig c0 = c;
  c0.encoder_blocks = 0;
  const ParameterStore p0 = init_parameters(c0, 9);
  Tape t0;
  BoundParameters b0(t0, p0, false);
  const Tensor out0 = audio_encode(b0, c0, t0.constant(patches), layout, ctx).value();
  Tensor ref = linear(patches, p0.get("audio.patch.weight"), p0.get("audio.patch.bias"));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < c.d; ++j) ref(i, j) += p0.get("audio.pos")(i, j);
  CHECK(bit_equal(out0, ref));

  const std::size_t long_len[] = {9};
  const Tensor long_patches = random_tensor(rng, {9, c.audio_in_dim});
  CHECK_THROWS_AS(audio_encode(bp, c, tape.constant(long_patches), PackedLayout::from_lengths(long_len), ctx),
                  LengthError);
}

TEST_CASE("decoder self attention is causal") {
  const ModelConfig c = small_config(FusionMode::kAudioOnly);
  const ParameterStore p = init_parameters(c, 2);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(rng, {5, c.d});
  const std::size_t len[] = {5};
  const PackedLayout text = PackedLayout::from_lengths(len);
  ForwardContext ctx;
  Tape tape;
  BoundParameters bp(tape, p, false);
  const Tensor h = decoder_self_attend(bp, c, 0, tape.constant(x), text, ctx).value();
  for (std::size_t j = 0; j < c.d; ++j) x(3, j) += 1.0;
  const Tensor h2 = decoder_self_attend(bp, c, 0, tape.constant(x), text, ctx).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < c.d; ++j) CHECK(h(i, j) == h2(i, j));
  CHECK(std::abs(h(3, 0) - h2(3, 0)) > 0.0);

  // One token: causal and unmasked attention coincide.
  const Tensor one = random_tensor(rng, {1, c.d});
  const std::size_t one_len[] = {1};
  const Tensor hc = decoder_self_attend(bp, c, 0, tape.constant(one), PackedLayout::from_lengths(one_len), ctx).value();
  const Var a = layer_norm_named(bp, "decoder.block0.ln_self", tape.constant(one), c.ln_eps);
  const Tensor ref =
      ag::add(tape.constant(one), multi_head_attention(a, a, bind_attention(bp, "decoder.block0.self_attn"),
                                                       c.heads, false))
          .value();
  CHECK(bit_equal(hc, ref));

  const std::size_t empty[] = {0};
  CHECK_THROWS_AS(decoder_self_attend(bp, c, 0, tape.constant(Tensor({0, c.d})), PackedLayout::from_lengths(empty), ctx),
                  DomainError);
}

TEST_CASE("cross attention contracts") {
  const ModelConfig c = small_config(FusionMode::kAudioOnly);
  const ParameterStore p = init_parameters(c, 3);
  std::mt19937_64 rng(8);
  Tape tape;
  BoundParameters bp(tape, p, false);
  const AttentionParams ap = bind_attention(bp, "decoder.block0.cross");
  const std::size_t q_len[] = {4};
  const PackedLayout text = PackedLayout::from_lengths(q_len);
  const Var q = tape.constant(random_tensor(rng, {4, c.d}));

  const Tensor m1 = random_tensor(rng, {1, c.d});
  const Tensor single = cross_attend(q, tape.constant(m1), ap, text, PackedLayout::shared(1, 1), c.heads).value();
  const Tensor vproj = linear(linear(m1, p.get("decoder.block0.cross.wv"), p.get("decoder.block0.cross.bv")),
                              p.get("decoder.block0.cross.wo"), p.get("decoder.block0.cross.bo"));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < c.d; ++j) CHECK(std::abs(single(i, j) - vproj(0, j)) < 1e-12);

  const Tensor m = random_tensor(rng, {3, c.d});
  Tensor doubled = Tensor::matrix(6, c.d);
  for (std::size_t i = 0; i < 6; ++i) std::copy_n(m.row(i % 3), c.d, doubled.row(i));
  const Tensor o1 = cross_attend(q, tape.constant(m), ap, text, PackedLayout::shared(1, 3), c.heads).value();
  const Tensor o2 = cross_attend(q, tape.constant(doubled), ap, text, PackedLayout::shared(1, 6), c.heads).value();
  CHECK(o1.shape() == Shape{4, c.d});
  CHECK(max_abs_diff(o1, o2) < 1e-9);

  CHECK_THROWS_AS(cross_attend(q, tape.constant(Tensor({0, c.d})), ap, text, PackedLayout::shared(1, 0), c.heads),
                  DomainError);
}

TEST_CASE("parameter initialisation is keyed by name") {
  const ModelConfig a = small_config(FusionMode::kAudioOnly);
  const ModelConfig cat = small_config(FusionMode::kConcatenate);
  const ParameterStore pa = init_parameters(a, 42);
  const ParameterStore pc = init_parameters(cat, 42);
  for (const auto& [name, t] : pa) {
    REQUIRE(pc.contains(name));
    CHECK(bit_equal(pc.get(name), t));
  }
  CHECK(pc.contains("visual.proj.weight"));
  CHECK(!pa.contains("visual.proj.weight"));
  CHECK(init_parameters(a, 42) == pa);
  CHECK(!(init_parameters(a, 43) == pa));

  const ParameterStore ada = init_parameters(small_config(FusionMode::kAdaavaAudio), 1);
  CHECK(ada.get("decoder.block1.conf.weight").shape() == Shape{32, 16});
  CHECK(ada.contains("decoder.block0.cross_visual.wq"));
  CHECK(!ada.contains("decoder.block0.cross.wq"));
}

TEST_CASE("concatenate without visual rows equals audio only") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = rng();
    const Captioner audio(small_config(FusionMode::kAudioOnly), seed);
    const Captioner cat(small_config(FusionMode::kConcatenate), seed);
    const ModelConfig& c = audio.config();
    std::vector<ModalityInput> in;
    std::vector<std::vector<int>> prefixes;
    std::vector<std::size_t> lengths;
    for (int b = 0; b < 3; ++b) {
      in.push_back({random_tensor(rng, {1 + rng() % 6, c.audio_in_dim}), Tensor({0, c.visual_in_dim})});
      std::vector<int> p = {Vocabulary::kSos};
      const std::size_t len = 1 + rng() % 6;
      while (p.size() < len) p.push_back(static_cast<int>(rng() % c.vocab_size));
      lengths.push_back(p.size());
      p.resize(7, Vocabulary::kPad);
      prefixes.push_back(p);
    }
    CHECK(bit_equal(audio.forward(in, prefixes, lengths), cat.forward(in, prefixes, lengths)));
    const EncodedModalities ea = audio.encode(in[0]);
    const EncodedModalities ec = cat.encode(in[0]);
    const std::vector<std::vector<int>> one = {{1, 4, 5}};
    CHECK(bit_equal(audio.next_token_logits(ea, one), cat.next_token_logits(ec, one)));
  }
}

TEST_CASE("batched forward is consistent, causal and padding invariant") {
  for (FusionMode mode : {FusionMode::kAudioOnly, FusionMode::kVideoOnly, FusionMode::kConcatenate,
                          FusionMode::kAdaavaAudio, FusionMode::kAdaavaVideo}) {
    CAPTURE(to_string(mode));
    const Captioner model(small_config(mode), 5);
    const ModelConfig& c = model.config();
    std::mt19937_64 rng(31);
    std::vector<ModalityInput> in = {random_input(rng, c, 4, 3), random_input(rng, c, 6, 2)};
    std::vector<std::vector<int>> prefixes = {{1, 5, 6, 7}, {1, 8, 0, 0}};
    const std::size_t lengths[] = {4, 2};
    const Tensor batch = model.forward(in, prefixes, lengths);
    CHECK(batch.shape() == Shape{2, 4, c.vocab_size});

    for (std::size_t b = 0; b < 2; ++b) {
      const std::vector<std::vector<int>> one_p = {prefixes[b]};
      const Tensor single = model.forward(std::span(in).subspan(b, 1), one_p, std::span(lengths).subspan(b, 1));
      for (std::size_t i = 0; i < lengths[b]; ++i)
        for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(single.data()[i * c.vocab_size + v] == batch.data()[(b * 4 + i) * c.vocab_size + v]);
    }

    // Doubling the padding leaves real positions unchanged.
    std::vector<std::vector<int>> padded = prefixes;
    for (auto& p : padded) p.resize(8, Vocabulary::kPad);
    const Tensor wide = model.forward(in, padded, lengths);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < lengths[b]; ++i)
        for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(wide.data()[(b * 8 + i) * c.vocab_size + v] == batch.data()[(b * 4 + i) * c.vocab_size + v]);

    // Changing token 3 leaves positions 0..2 untouched.
    std::vector<std::vector<int>> changed = prefixes;
    changed[0][3] = 2;
    const Tensor later = model.forward(in, changed, lengths);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(later.data()[i * c.vocab_size + v] == batch.data()[i * c.vocab_size + v]);

    // Cached next-token logits match the last row of the full forward.
    const EncodedModalities enc = model.encode(in[0]);
    const std::vector<std::vector<int>> p0 = {prefixes[0]};
    const Tensor next = model.next_token_logits(enc, p0);
    for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(next[v] == batch.data()[3 * c.vocab_size + v]);
  }
}

TEST_CASE("missing modalities and bad prefixes are rejected") {
  std::mt19937_64 rng(1);
  const Captioner video(small_config(FusionMode::kVideoOnly), 1);
  const Captioner ada(small_config(FusionMode::kAdaavaAudio), 1);
  const ModelConfig& c = ada.config();
  const std::vector<ModalityInput> no_visual = {random_input(rng, c, 3, 0)};
  const std::vector<std::vector<int>> p = {{1, 4}};
  const std::size_t len[] = {2};
  CHECK_THROWS_AS(video.forward(no_visual, p, len), ConfigError);
  CHECK_THROWS_AS(ada.forward(no_visual, p, len), ConfigError);
  const std::vector<ModalityInput> ok = {random_input(rng, c, 3, 2)};
  const std::vector<std::vector<int>> bad_token = {{1, 99}};
  CHECK_THROWS_AS(ada.forward(ok, bad_token, len), ValidationError);
  const std::vector<ModalityInput> wide = {random_input(rng, c, 9, 2)};
  CHECK_THROWS_AS(ada.forward(wide, p, len), LengthError);
}

TEST_CASE("non-finite logits name the batch index") {
  std::mt19937_64 rng(1);
  ModelConfig c = small_config(FusionMode::kAudioOnly);
  ParameterStore p = init_parameters(c, 1);
  p.get_mutable("decoder.ln_f.gain") = Tensor({c.d}, 1e308);
  for (std::size_t i = 0; i < c.d; ++i) p.get_mutable("decoder.out.weight")(i, 3) = 1e308;
  const Captioner model(c, std::move(p));
  const std::vector<ModalityInput> in = {random_input(rng, c, 3, 0), random_input(rng, c, 3, 0)};
  const std::vector<std::vector<int>> prefixes = {{1}, {1}};
  const std::size_t len[] = {1, 1};
  try {
    model.forward(in, prefixes, len);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("batch index 0") != std::string::npos);
  }
}

TEST_CASE("saturated audio confidence passes audio cross attention through") {
  ModelConfig c = small_config(FusionMode::kAdaavaAudio);
  c.decoder_blocks = 1;
  ParameterStore p = init_parameters(c, 7);
  p.get_mutable("decoder.block0.conf.bias") = Tensor({c.d}, 50.0);
  const Captioner model(c, std::move(p));
  std::mt19937_64 rng(2);
  ModalityInput in = random_input(rng, c, 4, 3);
  in.visual = Tensor(in.visual.shape());
  std::vector<AdaAVATrace> traces;
  const std::vector<std::vector<int>> prefix = {{1, 5, 6}};
  model.next_token_logits(model.encode(in), prefix, &traces);
  REQUIRE(traces.size() == 1);
  const AdaAVATrace& tr = traces[0];
  CHECK(tr.av_out.shape() == Shape{3, c.d});
  for (std::size_t i = 0; i < tr.av_out.numel(); ++i) {
    CHECK(tr.mask_visual[i] == 0.0);
    CHECK(std::abs(tr.av_out[i] - tr.a_cross[i]) < 1e-9 * (1.0 + std::abs(tr.a_cross[i])));
  }
}

TEST_CASE("decoder block gradients match finite differences") {
  for (FusionMode mode : {FusionMode::kAdaavaAudio, FusionMode::kAdaavaVideo, FusionMode::kConcatenate,
                          FusionMode::kAudioOnly}) {
    CAPTURE(to_string(mode));
    BlockCheckOptions o;
    o.config = small_config(mode);
    o.seed = 3;
    o.coords_per_group = 12;
    const auto groups = check_decoder_block_gradients(o);
    CHECK(groups.size() > 10);
    bool saw_conf = false;
    for (const GroupCheck& g : groups) {
      CAPTURE(g.group);
      CHECK(g.max_rel_error < 1e-5);
      CHECK(g.checked > 0);
      saw_conf |= g.group == "conf.weight";
    }
    CHECK(saw_conf == is_adaava(mode));
  }
}

TEST_CASE("gradient check fails across a mask threshold without exclusion") {
  BlockCheckOptions o;
  o.config = small_config(FusionMode::kAdaavaAudio);
  o.near_threshold = true;
  o.exclusion = false;
  o.coords_per_group = 12;
  double worst = 0.0;
  for (const GroupCheck& g : check_decoder_block_gradients(o)) worst = std::max(worst, g.max_rel_error);
  CHECK(worst > 1e-2);

  o.exclusion = true;
  worst = 0.0;
  std::size_t excluded = 0;
  for (const GroupCheck& g : check_decoder_block_gradients(o)) {
    worst = std::max(worst, g.max_rel_error);
    excluded += g.excluded;
  }
  CHECK(worst < 1e-5);
  CHECK(excluded > 0);
}

TEST_CASE("model checkpoint round trip and validation") {
  testing::TempDir dir("ckpt");
  const Captioner model(small_config(FusionMode::kAdaavaVideo), 12);
  const Vocabulary vocab = Vocabulary::from_words({"a", "dog", "barks", "cat", "meows"});
  save_model(model, vocab, dir / "m.avck");
  const ModelBundle back = load_model(dir / "m.avck");
  CHECK(back.model.config() == model.config());
  CHECK(back.model.parameters() == model.parameters());
  CHECK(back.vocab == vocab);

  CheckpointData data = pack_model(model, vocab);
  for (auto& [name, t] : data.tensors) {
    if (name == "param/decoder.block0.conf.weight") t = Tensor({3, 3});
  }
  try {
    unpack_model(data);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).starts_with("parameter mismatch at decoder.block0.conf.weight"));
  }

  std::ofstream(dir / "junk.avck") << "NOPE";
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.avck"), IoError);
}
