// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <random>

#include "avfuse/errors.hpp"
#include "avfuse/numerics/gradcheck.hpp"
#include "avfuse/training/dataset.hpp"
#include "avfuse/training/loss.hpp"
#include "avfuse/training/optimizer.hpp"
#include "avfuse/training/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace avfuse;
using avfuse::testing::random_tensor;

namespace {

double ce_oracle(const Tensor& z, std::span<const int> t, double eps) {
  const std::size_t v = z.cols();
  double total = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (t[r] == 0) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(z(r, j));
    for (std::size_t j = 0; j < v; ++j) {
      const double q = static_cast<int>(j) == t[r] ? 1.0 - eps : eps / static_cast<double>(v - 1);
      total -= q * std::log(std::exp(z(r, j)) / s);
    }
    ++n;
  }
  return total / n;
}

struct SmallTask {
  Vocabulary vocab;
  ModelConfig model;
  std::vector<TrainExample> train, val;
};

SmallTask small_task(int per_class, FusionMode mode = FusionMode::kAdaavaAudio) {
  SyntheticTaskSpec spec;
  spec.n_classes = 4;
  spec.n_ambiguous_pairs = 1;
  spec.train_per_class = per_class;
  spec.eval_per_class = 2;
  const SyntheticTask task = generate_synthetic_task(spec);
  const auto train = clips_from_synthetic(task.train);
  const auto val = clips_from_synthetic(task.eval);
  SmallTask s{build_caption_vocabulary(train), {}, {}, {}};
  s.model.d = 32;
  s.model.heads = 2;
  s.model.encoder_blocks = 1;
  s.model.decoder_blocks = 1;
  s.model.vocab_size = s.vocab.size();
  s.model.audio_in_dim = 16;
  s.model.visual_in_dim = 16;
  s.model.max_audio_len = 8;
  s.model.fusion_mode = mode;
  s.train = make_train_examples(train, s.vocab, 22);
  s.val = make_train_examples(val, s.vocab, 22);
  return s;
}

}  // namespace

TEST_CASE("label smoothing loss matches oracles") {
  std::mt19937_64 rng(1);
  const Tensor z = random_tensor(rng, {6, 7}, 2.0);
  const std::vector<int> t = {3, 0, 5, 1, 6, 0};
  for (double eps : {0.0, 0.1, 0.4}) {
    Tape tape;
    const double loss = label_smoothing_ce(tape.constant(z), t, eps).value().item();
    CHECK(std::abs(loss - ce_oracle(z, t, eps)) < 1e-12);
  }
  for (double eps : {0.0, 0.1, 0.7}) {
    Tape tape;
    const double loss = label_smoothing_ce(tape.constant(Tensor({3, 9}, 0.4)), std::vector<int>{1, 2, 3}, eps)
                            .value()
                            .item();
    CHECK(std::abs(loss - std::log(9.0)) < 1e-12);
  }
  Tensor confident({2, 5});
  confident(0, 2) = 30.0;
  confident(1, 4) = 30.0;
  Tape tape;
  const std::vector<int> ct = {2, 4};
  CHECK(label_smoothing_ce(tape.constant(confident), ct, 0.1).value().item() >
        label_smoothing_ce(tape.constant(confident), ct, 0.0).value().item());

  const std::vector<int> pads = {0, 0};
  CHECK_THROWS_AS(label_smoothing_ce(tape.constant(confident), pads, 0.1), DomainError);
  const std::vector<int> bad = {2, 9};
  CHECK_THROWS_AS(label_smoothing_ce(tape.constant(confident), bad, 0.1), ValidationError);

  const auto f = [&](Tape& tp, const Var& x) { return label_smoothing_ce(x, t, 0.1); };
  CHECK(gradcheck(f, z, 1e-6).max_rel_error < 1e-8);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  CHECK(lr_at(0, 10, c) == 0.0);
  CHECK(lr_at(50, 10, c) == 1e-4);
  CHECK(lr_at(25, 10, c) == 0.5e-4);
  CHECK(lr_at(1000, 10, c) == 1e-4);
  CHECK(std::abs(lr_at(49, 10, c) - lr_at(50, 10, c)) < 1e-4 / 49.0);
  c.warmup_epochs = 0;
  CHECK(lr_at(0, 10, c) == 1e-4);
}

TEST_CASE("adam matches closed forms and an elementwise oracle") {
  ParameterStore p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  ParameterStore zero = p.zeros_like();
  AdamState s = adam_init(p);
  adam_step(p, zero, s, 0.1);
  CHECK(p.get("w")[0] == 1.0);
  CHECK(p.get("w")[1] == -2.0);

  ParameterStore q;
  q.add("x", Tensor::scalar(3.0));
  AdamState qs = adam_init(q);
  ParameterStore g;
  g.add("x", Tensor::scalar(-0.7));
  adam_step(q, g, qs, 0.01);
  CHECK(std::abs(q.get("x").item() - (3.0 + 0.01 * 0.7 / (0.7 + 1e-8))) < 1e-15);

  std::mt19937_64 rng(5);
  ParameterStore r;
  r.add("a", random_tensor(rng, {3, 4}));
  r.add("b", random_tensor(rng, {5}));
  AdamState rs = adam_init(r);
  std::vector<double> ref_p, m, v;
  for (const auto& [n, t] : r) ref_p.insert(ref_p.end(), t.storage().begin(), t.storage().end());
  m.assign(ref_p.size(), 0.0);
  v.assign(ref_p.size(), 0.0);
  for (int step = 1; step <= 100; ++step) {
    ParameterStore grads;
    grads.add("a", random_tensor(rng, {3, 4}));
    grads.add("b", random_tensor(rng, {5}));
    std::vector<double> flat;
    for (const auto& [n, t] : grads) flat.insert(flat.end(), t.storage().begin(), t.storage().end());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * flat[i];
      v[i] = 0.999 * v[i] + 0.001 * flat[i] * flat[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, step));
      const double vh = v[i] / (1.0 - std::pow(0.999, step));
      ref_p[i] -= 0.003 * mh / (std::sqrt(vh) + 1e-8);
    }
    adam_step(r, grads, rs, 0.003);
  }
  std::size_t k = 0;
  for (const auto& [n, t] : r)
    for (double x : t.data()) CHECK(std::abs(x - ref_p[k++]) < 1e-10);

  ParameterStore nan_grad;
  nan_grad.add("a", Tensor({3, 4}, std::nan("")));
  nan_grad.add("b", Tensor({5}));
  try {
    adam_step(r, nan_grad, rs, 0.1);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("'a'") != std::string::npos);
  }
}

TEST_CASE("gradient clipping") {
  ParameterStore g;
  g.add("a", Tensor::vector({3.0, 4.0}));
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(std::abs(global_norm(g) - 1.0) < 1e-15);
  ParameterStore h;
  h.add("a", Tensor::vector({3.0, 4.0}));
  clip_global_norm(h, 0.0);
  CHECK(h.get("a")[1] == 4.0);
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  c.lr_peak = 3e-3;
  c.grad_clip = 0.0;
  CHECK(TrainConfig::from_json(c.to_json()) == c);
  c.warmup_epochs = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1}}), ConfigError);
}

TEST_CASE("zero epochs leave the model untouched") {
  SmallTask t = small_task(2);
  Captioner model(t.model, 1);
  const ParameterStore before = model.parameters();
  TrainConfig c;
  c.epochs = 0;
  c.warmup_epochs = 0;
  const FitResult r = fit(model, t.vocab, t.train, t.val, c, initial_train_state(model, c));
  CHECK(r.log.empty());
  CHECK(model.parameters() == before);
  CHECK(r.state.step == 0);
}

TEST_CASE("overfitting a single example") {
  SyntheticTaskSpec spec;
  spec.train_per_class = 1;
  const SyntheticTask task = generate_synthetic_task(spec);
  const auto clips = clips_from_synthetic(std::span(task.train).first(1));
  const Vocabulary vocab = build_caption_vocabulary(clips);
  ModelConfig mc;  // desk scale
  mc.vocab_size = vocab.size();
  mc.audio_in_dim = 16;
  mc.visual_in_dim = 16;
  mc.max_audio_len = 8;
  mc.dropout = 0.0;
  Captioner model(mc, 3);
  TrainConfig tc;
  tc.epochs = 200;
  tc.warmup_epochs = 0;
  tc.batch_size = 1;
  tc.lr_peak = 1e-4;
  tc.label_smoothing = 0.0;
  const auto examples = make_train_examples(clips, vocab, 22);
  const FitResult r = fit(model, vocab, examples, {}, tc, initial_train_state(model, tc));
  REQUIRE(r.log.size() == 200);
  for (std::size_t i = 1; i < 10; ++i) CHECK(r.log[i].train_loss < r.log[i - 1].train_loss);
  CHECK(r.log.back().train_loss < 0.05);
}

TEST_CASE("fit is deterministic and resumes bit-identically") {
  SmallTask t = small_task(3);
  TrainConfig c;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 4;
  c.lr_peak = 2e-3;
  c.seed = 9;

  Captioner a(t.model, 4), b(t.model, 4);
  const FitResult ra = fit(a, t.vocab, t.train, t.val, c, initial_train_state(a, c));
  const FitResult rb = fit(b, t.vocab, t.train, t.val, c, initial_train_state(b, c));
  CHECK(ra.log == rb.log);
  CHECK(a.parameters() == b.parameters());
  std::vector<double> val;
  for (const MetricsRecord& rec : ra.log) {
    if (rec.val_loss) val.push_back(*rec.val_loss);
  }
  REQUIRE(val.size() == 3);
  CHECK(ra.log.back().val_loss.has_value());
  CHECK(val.back() < val.front());

  testing::TempDir dir("resume");
  Captioner partial(t.model, 4);
  FitOptions first;
  first.checkpoint_dir = dir.path();
  first.stop_after_epoch = 2;
  first.metrics_log = dir / "metrics.jsonl";
  const FitResult r1 = fit(partial, t.vocab, t.train, t.val, c, initial_train_state(partial, c), first);
  CHECK(r1.state.epoch == 2);

  TrainingCheckpoint ck = load_training_checkpoint(dir / "last.avck");
  CHECK(ck.config == c);
  CHECK(ck.state.epoch == 2);
  CHECK(ck.bundle.model.parameters() == partial.parameters());
  const FitResult r2 = fit(ck.bundle.model, ck.bundle.vocab, t.train, t.val, ck.config, ck.state);
  CHECK(ck.bundle.model.parameters() == a.parameters());
  std::vector<MetricsRecord> joined = r1.log;
  joined.insert(joined.end(), r2.log.begin(), r2.log.end());
  CHECK(joined == ra.log);

  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("val_loss"));
    ++lines;
  }
  CHECK(lines == r1.log.size());
  CHECK(std::filesystem::exists(dir / "best.avck"));
}

TEST_CASE("full loss gradients pass finite-difference spot checks") {
  SmallTask t = small_task(1);
  t.model.dropout = 0.0;
  const Captioner model(t.model, 6);
  std::vector<ModalityInput> inputs;
  std::vector<std::vector<int>> prefixes;
  std::vector<int> targets;
  for (const TrainExample& ex : std::span(t.train).first(3)) {
    inputs.push_back(ex.input);
    prefixes.emplace_back(ex.tokens.begin(), ex.tokens.end() - 1);
    targets.insert(targets.end(), ex.tokens.begin() + 1, ex.tokens.end());
  }
  const auto names = model.parameters().names();
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const std::string name = names[rng() % names.size()];
    const Tensor& value = model.parameters().get(name);
    const std::size_t coord = rng() % value.numel();
    const ScalarFunction f = [&](Tape& tape, const Var& x) {
      BoundParameters bp(tape, model.parameters(), false);
      bp.override(name, x);
      ForwardContext ctx;
      return label_smoothing_ce(model.packed_logits(bp, inputs, prefixes, ctx), targets, 0.1);
    };
    const std::size_t coords[] = {coord};
    const GradcheckResult r = gradcheck(f, value, 1e-6, {}, coords);
    CAPTURE(name);
    CHECK(r.max_rel_error < 1e-4);
    worst = std::max(worst, r.max_rel_error);
  }
  MESSAGE("worst relative error " << worst);
}
