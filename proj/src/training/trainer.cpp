// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "avfuse/errors.hpp"
#include "avfuse/frontend/mel.hpp"
#include "avfuse/training/loss.hpp"

namespace avfuse {

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ValidationError("corrupt random generator state");
  return rng;
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// Teacher forcing: prefix = tokens[0..n-2], targets = tokens[1..n-1].
struct PreparedBatch {
  std::vector<ModalityInput> inputs;
  std::vector<std::vector<int>> prefixes;
  std::vector<int> targets;
};

PreparedBatch prepare(std::span<const TrainExample> all, std::span<const std::size_t> index,
                      const TrainConfig* augment_cfg, std::mt19937_64* augment_rng) {
  PreparedBatch b;
  for (std::size_t i : index) {
    const TrainExample& ex = all[i];
    if (ex.tokens.size() < 2) throw ValidationError("training caption needs at least sos and eos");
    ModalityInput in = ex.input;
    if (augment_cfg && augment_cfg->spec_augment && ex.mel.numel() > 0) {
      in.audio = patchify(spec_augment(ex.mel, augment_cfg->augment, *augment_rng));
    }
    b.inputs.push_back(std::move(in));
    b.prefixes.emplace_back(ex.tokens.begin(), ex.tokens.end() - 1);
    b.targets.insert(b.targets.end(), ex.tokens.begin() + 1, ex.tokens.end());
  }
  return b;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot append to " + path.string());
  os << line << '\n';
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(lr_peak > 0.0)) problems.push_back("lr_peak must be positive");
  if (warmup_epochs > epochs) problems.push_back("warmup_epochs must not exceed epochs");
  if (batch_size == 0) problems.push_back("batch_size must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) problems.push_back("label_smoothing must lie in [0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    problems.push_back("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) problems.push_back("adam eps must be positive");
  if (!(grad_clip >= 0.0)) problems.push_back("grad_clip must be >= 0 (0 disables)");
  if (checkpoint_interval == 0) problems.push_back("checkpoint_interval must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_peak", lr_peak},
          {"epochs", epochs},
          {"warmup_epochs", warmup_epochs},
          {"batch_size", batch_size},
          {"label_smoothing", label_smoothing},
          {"adam_beta1", adam.beta1},
          {"adam_beta2", adam.beta2},
          {"adam_eps", adam.eps},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"checkpoint_interval", checkpoint_interval},
          {"spec_augment", spec_augment},
          {"augment_time_masks", augment.n_time_masks},
          {"augment_time_width", augment.max_time_width},
          {"augment_freq_masks", augment.n_freq_masks},
          {"augment_freq_width", augment.max_freq_width}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  TrainConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  try {
    const auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lr_peak", c.lr_peak);
    get("epochs", c.epochs);
    get("warmup_epochs", c.warmup_epochs);
    get("batch_size", c.batch_size);
    get("label_smoothing", c.label_smoothing);
    get("adam_beta1", c.adam.beta1);
    get("adam_beta2", c.adam.beta2);
    get("adam_eps", c.adam.eps);
    get("grad_clip", c.grad_clip);
    get("seed", c.seed);
    get("checkpoint_interval", c.checkpoint_interval);
    get("spec_augment", c.spec_augment);
    get("augment_time_masks", c.augment.n_time_masks);
    get("augment_time_width", c.augment.max_time_width);
    get("augment_freq_masks", c.augment.n_freq_masks);
    get("augment_freq_width", c.augment.max_freq_width);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return c;
}

double lr_at(std::uint64_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const std::uint64_t warmup = static_cast<std::uint64_t>(cfg.warmup_epochs) * steps_per_epoch;
  if (step >= warmup) return cfg.lr_peak;
  return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j = {{"step", step}, {"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}};
  j["val_loss"] = val_loss ? nlohmann::json(*val_loss) : nlohmann::json(nullptr);
  return j;
}

TrainState initial_train_state(const Captioner& model, const TrainConfig& cfg) {
  TrainState s;
  s.adam = adam_init(model.parameters());
  s.data_rng = rng_to_string(substream(cfg.seed, 11));
  s.augment_rng = rng_to_string(substream(cfg.seed, 12));
  s.dropout_rng = rng_to_string(substream(cfg.seed, 13));
  return s;
}

double evaluate_loss(const Captioner& model, std::span<const TrainExample> examples, double eps,
                     std::size_t batch_size) {
  if (examples.empty()) throw DomainError("evaluate_loss: no examples");
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> index;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    index.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) index.push_back(i);
    const PreparedBatch b = prepare(examples, index, nullptr, nullptr);
    Tape tape;
    BoundParameters bp(tape, model.parameters(), false);
    ForwardContext ctx;
    const Var logits = model.packed_logits(bp, b.inputs, b.prefixes, ctx);
    const std::size_t n = static_cast<std::size_t>(
        std::count_if(b.targets.begin(), b.targets.end(), [](int t) { return t != Vocabulary::kPad; }));
    total += label_smoothing_ce(logits, b.targets, eps, Vocabulary::kPad).value().item() * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

FitResult fit(Captioner& model, const Vocabulary& vocab, std::span<const TrainExample> train,
              std::span<const TrainExample> val, const TrainConfig& cfg, TrainState state,
              const FitOptions& options) {
  cfg.validate();
  if (train.empty()) throw ValidationError("fit: no training examples");
  for (const TrainExample& ex : train) {
    for (int t : ex.tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= model.config().vocab_size) {
        throw ValidationError("fit: token id " + std::to_string(t) + " outside the model vocabulary");
      }
    }
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::mt19937_64 data_rng = rng_from_string(state.data_rng);
  std::mt19937_64 augment_rng = rng_from_string(state.augment_rng);
  std::mt19937_64 dropout_rng = rng_from_string(state.dropout_rng);

  FitResult result;
  std::vector<std::size_t> order(train.size());
  while (state.epoch < cfg.epochs) {
    if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch) {
      if (options.checkpoint_dir && state.epoch % cfg.checkpoint_interval != 0) {
        save_training_checkpoint(model, vocab, cfg, state, *options.checkpoint_dir / "last.avck");
      }
      break;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), data_rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size;
      const std::size_t end = std::min(train.size(), begin + cfg.batch_size);
      const PreparedBatch batch =
          prepare(train, std::span(order).subspan(begin, end - begin), &cfg, &augment_rng);
      const double lr = lr_at(state.step, steps_per_epoch, cfg);
      double loss_value = 0.0;
      ParameterStore grads;
      try {
        Tape tape;
        BoundParameters bp(tape, model.parameters(), true);
        ForwardContext ctx;
        ctx.training = true;
        ctx.rng = &dropout_rng;
        const Var logits = model.packed_logits(bp, batch.inputs, batch.prefixes, ctx);
        const Var loss = label_smoothing_ce(logits, batch.targets, cfg.label_smoothing, Vocabulary::kPad);
        loss_value = loss.value().item();
        grads = bp.gradients(tape.backward(loss));
        clip_global_norm(grads, cfg.grad_clip);
        adam_step(model.mutable_parameters(), grads, state.adam, lr, cfg.adam);
      } catch (const NumericalError& e) {
        throw NumericalError("training step " + std::to_string(state.step) + ": " + e.what());
      }
      epoch_loss += loss_value;
      MetricsRecord rec{state.step, state.epoch, lr, loss_value, std::nullopt};
      ++state.step;
      if (s + 1 == steps_per_epoch && !val.empty()) {
        rec.val_loss = evaluate_loss(model, val, cfg.label_smoothing, cfg.batch_size);
      }
      if (options.metrics_log) append_line(*options.metrics_log, rec.to_json().dump());
      if (options.on_step) options.on_step(rec);
      result.log.push_back(rec);
    }
    ++state.epoch;

    const double score = result.log.back().val_loss.value_or(epoch_loss / static_cast<double>(steps_per_epoch));
    const bool improved = !state.has_best || score < state.best_val_loss;
    if (improved) {
      state.best_val_loss = score;
      state.best_epoch = state.epoch;
      state.has_best = true;
    }
    state.data_rng = rng_to_string(data_rng);
    state.augment_rng = rng_to_string(augment_rng);
    state.dropout_rng = rng_to_string(dropout_rng);
    if (options.checkpoint_dir &&
        (state.epoch % cfg.checkpoint_interval == 0 || state.epoch == cfg.epochs)) {
      save_training_checkpoint(model, vocab, cfg, state, *options.checkpoint_dir / "last.avck");
      if (improved) {
        save_training_checkpoint(model, vocab, cfg, state, *options.checkpoint_dir / "best.avck");
      }
    }
  }
  state.data_rng = rng_to_string(data_rng);
  state.augment_rng = rng_to_string(augment_rng);
  state.dropout_rng = rng_to_string(dropout_rng);
  result.state = std::move(state);
  return result;
}

void save_training_checkpoint(const Captioner& model, const Vocabulary& vocab, const TrainConfig& cfg,
                              const TrainState& state, const std::filesystem::path& path) {
  CheckpointData data = pack_model(model, vocab);
  data.meta["train_config"] = cfg.to_json();
  data.meta["train_state"] = {{"step", state.step},
                              {"epoch", state.epoch},
                              {"adam_step", state.adam.step},
                              {"data_rng", state.data_rng},
                              {"augment_rng", state.augment_rng},
                              {"dropout_rng", state.dropout_rng},
                              {"best_val_loss", state.best_val_loss},
                              {"best_epoch", state.best_epoch},
                              {"has_best", state.has_best}};
  for (const auto& [name, t] : state.adam.m) data.tensors.emplace_back("adam_m/" + name, t);
  for (const auto& [name, t] : state.adam.v) data.tensors.emplace_back("adam_v/" + name, t);
  write_checkpoint(data, path);
}

TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  if (!data.meta.contains("train_config") || !data.meta.contains("train_state")) {
    throw ValidationError(path.string() + " holds no training state");
  }
  ModelBundle bundle = unpack_model(data);
  const TrainConfig cfg = TrainConfig::from_json(data.meta.at("train_config"));
  const auto& js = data.meta.at("train_state");
  TrainState s;
  try {
    s.step = js.at("step").get<std::uint64_t>();
    s.epoch = js.at("epoch").get<std::size_t>();
    s.adam.step = js.at("adam_step").get<std::uint64_t>();
    s.data_rng = js.at("data_rng").get<std::string>();
    s.augment_rng = js.at("augment_rng").get<std::string>();
    s.dropout_rng = js.at("dropout_rng").get<std::string>();
    s.best_val_loss = js.at("best_val_loss").get<double>();
    s.best_epoch = js.at("best_epoch").get<std::size_t>();
    s.has_best = js.at("has_best").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": corrupt train state: " + e.what());
  }
  for (const auto& [name, t] : bundle.model.parameters()) {
    const Tensor* m = data.find("adam_m/" + name);
    const Tensor* v = data.find("adam_v/" + name);
    if (!m || !v || m->shape() != t.shape() || v->shape() != t.shape()) {
      throw ValidationError(path.string() + ": optimiser moments missing or misshapen for '" + name + "'");
    }
    s.adam.m.add(name, *m);
    s.adam.v.add(name, *v);
  }
  return {std::move(bundle), cfg, std::move(s)};
}

}  // namespace avfuse
