// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "CLI11.hpp"
#include "avfuse/cli/commands.hpp"
#include "avfuse/errors.hpp"

namespace avfuse::cli {

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const UsageError*>(&e)) {
    return 1;
  }
  return 2;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual captioning with adaptive audio-visual attention"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string synth_out;
  auto* s = app.add_subcommand("synth", "Write the synthetic audio-visual captioning task");
  s->add_option("out_dir", synth_out, "Output directory")->required();
  s->add_flag("--force", synth.force, "Overwrite a non-empty directory");
  s->add_option("--seed", synth.spec.seed, "Random seed");
  s->add_option("--classes", synth.spec.n_classes, "Number of classes");
  s->add_option("--ambiguous-pairs", synth.spec.n_ambiguous_pairs, "Class pairs sharing one audio prototype");
  s->add_option("--noise-std", synth.spec.noise_std, "Feature noise standard deviation");
  s->add_option("--sound-variants", synth.spec.n_sound_variants, "Sound words per class");
  s->add_option("--feature-dim", synth.spec.feature_dim, "Feature width");
  s->add_option("--audio-len", synth.spec.audio_len, "Audio feature rows");
  s->add_option("--visual-len", synth.spec.visual_len, "Visual feature rows");
  s->add_option("--train-per-class", synth.spec.train_per_class, "Training clips per class");
  s->add_option("--eval-per-class", synth.spec.eval_per_class, "Evaluation clips per class");

  TrainOptions train;
  std::string train_config;
  std::vector<std::string> train_sets;
  std::string t_mode, t_train_manifest, t_eval_manifest, t_ckpt;
  std::optional<double> t_beta, t_lr;
  std::optional<std::uint64_t> t_seed;
  std::optional<std::size_t> t_epochs, t_batch, t_stop;
  auto* t = app.add_subcommand("train", "Train a captioner");
  t->add_option("--config", train_config, "Run config JSON file");
  t->add_option("--set", train_sets, "Override a config key, e.g. model.d=64 (repeatable)");
  t->add_option("--fusion-mode", t_mode, "audio_only, video_only, concatenate, adaava_audio or adaava_video");
  t->add_option("--beta", t_beta, "Confidence threshold");
  t->add_option("--seed", t_seed, "Random seed");
  t->add_option("--epochs", t_epochs, "Training epochs");
  t->add_option("--lr", t_lr, "Peak learning rate");
  t->add_option("--batch-size", t_batch, "Batch size");
  t->add_option("--train-manifest", t_train_manifest, "Training manifest");
  t->add_option("--eval-manifest", t_eval_manifest, "Validation manifest");
  t->add_option("--checkpoint-dir", t_ckpt, "Checkpoint directory");
  t->add_flag("--resume", train.resume, "Continue from last.avck in the checkpoint directory");
  t->add_option("--stop-after-epoch", t_stop, "Stop once this many epochs are complete");
  t->add_flag("--quiet", train.quiet, "Only print the run header");

  EvalOptions eval;
  std::string e_ckpt, e_manifest, e_report, e_cand, e_config;
  auto* e = app.add_subcommand("eval", "Decode a manifest and score it");
  e->add_option("--checkpoint", e_ckpt, "Model checkpoint")->required();
  e->add_option("--manifest", e_manifest, "Manifest with reference captions")->required();
  e->add_option("--beam", eval.beam, "Beam width")->capture_default_str();
  e->add_flag("--greedy", eval.greedy, "Greedy decoding");
  e->add_option("--report", e_report, "Report path");
  e->add_option("--candidates", e_cand, "Candidates output path");
  e->add_option("--config", e_config, "Run config the checkpoint must agree with");

  InferOptions infer;
  std::string i_ckpt, i_audio, i_visual;
  auto* in = app.add_subcommand("infer", "Caption one clip");
  in->add_option("--checkpoint", i_ckpt, "Model checkpoint")->required();
  in->add_option("--audio", i_audio, "WAV file or audio feature file")->required();
  in->add_option("--visual", i_visual, "Visual feature file");
  in->add_option("--beam", infer.beam, "Beam width")->capture_default_str();
  in->add_flag("--trace", infer.trace, "Print the confidence gate summary");

  GradcheckOptions grad;
  bool no_exclusion = false;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the fusion decoder block");
  g->add_option("--seed", grad.seed, "Random seed");
  g->add_flag("--no-exclusion", no_exclusion, "Keep coordinates whose probes cross a mask threshold");
  g->add_flag("--near-threshold", grad.near_threshold, "Place a confidence entry just above beta");
  g->add_option("--fusion-mode", grad.fusion_mode, "Fusion mode of the block")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) {
      synth.out_dir = synth_out;
      cmd_synth(synth, out);
    } else if (*t) {
      if (!train_config.empty()) train.config = train_config;
      if (!t_mode.empty()) train.overrides.emplace_back("fusion_mode", t_mode);
      if (t_beta) train.overrides.emplace_back("model.beta", *t_beta);
      if (t_seed) train.overrides.emplace_back("seed", *t_seed);
      if (t_epochs) train.overrides.emplace_back("train.epochs", *t_epochs);
      if (t_lr) train.overrides.emplace_back("train.lr_peak", *t_lr);
      if (t_batch) train.overrides.emplace_back("train.batch_size", *t_batch);
      if (!t_train_manifest.empty()) train.overrides.emplace_back("train_manifest", t_train_manifest);
      if (!t_eval_manifest.empty()) train.overrides.emplace_back("eval_manifest", t_eval_manifest);
      if (!t_ckpt.empty()) train.overrides.emplace_back("checkpoint_dir", t_ckpt);
      for (const auto& kv : train_sets) train.overrides.push_back(parse_override(kv));
      train.stop_after_epoch = t_stop;
      cmd_train(train, out);
    } else if (*e) {
      eval.checkpoint = e_ckpt;
      eval.manifest = e_manifest;
      if (!e_report.empty()) eval.report = e_report;
      if (!e_cand.empty()) eval.candidates = e_cand;
      if (!e_config.empty()) eval.config = e_config;
      cmd_eval(eval, out);
    } else if (*in) {
      infer.checkpoint = i_ckpt;
      infer.audio = i_audio;
      if (!i_visual.empty()) infer.visual = i_visual;
      cmd_infer(infer, out);
    } else if (*g) {
      grad.exclusion = !no_exclusion;
      if (!cmd_gradcheck(grad, out)) return 2;
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return 0;
}

}  // namespace avfuse::cli
