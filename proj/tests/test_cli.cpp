// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <map>
#include <sstream>

#include "avfuse/cli/commands.hpp"
#include "avfuse/data/manifest.hpp"
#include "avfuse/errors.hpp"
#include "avfuse/frontend/wav.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace avfuse;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "avfuse");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  }
  return files;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

const std::vector<std::string> kSmallTask = {"--classes",         "4", "--ambiguous-pairs", "1",
                                             "--train-per-class", "6", "--eval-per-class",  "2"};

const std::vector<std::string> kSmallModel = {"--set", "model.d=32",          "--set", "model.heads=2",
                                              "--set", "model.encoder_blocks=1", "--set", "model.decoder_blocks=1",
                                              "--set", "train.warmup_epochs=1", "--lr",  "1e-3",
                                              "--batch-size", "8", "--quiet"};

Result synth(const fs::path& dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> args = {"synth", dir.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return invoke(args);
}

Result train(const fs::path& data, const fs::path& ckpt, std::vector<std::string> extra) {
  std::vector<std::string> args = {"train", "--train-manifest", (data / "train.jsonl").string(),
                                   "--eval-manifest", (data / "eval.jsonl").string(), "--checkpoint-dir",
                                   ckpt.string()};
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  args.insert(args.end(), extra.begin(), extra.end());
  return invoke(args);
}

}  // namespace

TEST_CASE("synth writes loadable, reproducible datasets") {
  testing::TempDir dir("cli_synth");
  const Result r = synth(dir / "a", {"--seed", "7"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train 192 clips") != std::string::npos);
  CHECK(load_manifest(dir / "a" / "train.jsonl").size() == 192);
  CHECK(load_manifest(dir / "a" / "eval.jsonl").size() == 64);
  REQUIRE(synth(dir / "b", {"--seed", "7"}).code == 0);
  CHECK(snapshot(dir / "a") == snapshot(dir / "b"));

  const Result again = synth(dir / "a", {"--seed", "8"});
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(synth(dir / "a", {"--seed", "7", "--force"}).code == 0);
  CHECK(snapshot(dir / "a") == snapshot(dir / "b"));

  const Result bad = synth(dir / "c", {"--ambiguous-pairs", "2", "--classes", "3"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("n_classes (3)") != std::string::npos);
  CHECK(invoke({"synth"}).code == 1);
  CHECK(invoke({"nonsense"}).code == 1);
}

TEST_CASE("run config resolution") {
  testing::TempDir dir("cli_config");
  {
    std::ofstream f(dir / "run.json");
    f << R"({"seed": 3, "model": {"beta": 0.2, "d": 64}, "train": {"epochs": 2}, "train_manifest": "data/train.jsonl"})";
  }
  const cli::RunConfig rc = cli::resolve_run_config(dir / "run.json", {{"model.beta", 0.13}, {"seed", 5}});
  CHECK(rc.model.beta == 0.13);
  CHECK(rc.model.d == 64);
  CHECK(rc.seed == 5);
  CHECK(rc.train.seed == 5);
  CHECK(rc.train.epochs == 2);
  CHECK(rc.train_manifest == (dir / "data" / "train.jsonl").lexically_normal());
  CHECK(rc.overrides == std::vector<std::string>{"model.beta=0.13", "seed=5"});
  const json echo = rc.to_json();
  CHECK(echo.at("model").at("beta") == 0.13);

  {
    std::ofstream f(dir / "bad.json");
    f << R"({"sed": 1, "model": {"dd": 2, "beta": 0.1}, "train": {"epoch": 3}})";
  }
  try {
    cli::resolve_run_config(dir / "bad.json", {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'sed'") != std::string::npos);
    CHECK(msg.find("'model.dd'") != std::string::npos);
    CHECK(msg.find("'train.epoch'") != std::string::npos);
  }
  CHECK(cli::parse_override("model.fusion_mode=audio_only").second == "audio_only");
  CHECK(cli::parse_override("train.epochs=4").second == 4);
  CHECK_THROWS_AS(cli::parse_override("novalue"), UsageError);
}

TEST_CASE("directory lock is exclusive") {
  testing::TempDir dir("cli_lock");
  {
    cli::DirectoryLock lock(dir.path());
    CHECK_THROWS_AS(cli::DirectoryLock(dir.path()), IoError);
  }
  CHECK_NOTHROW(cli::DirectoryLock(dir.path()));
}

TEST_CASE("train, eval and infer on the synthetic task") {
  testing::TempDir dir("cli_train");
  const fs::path data = dir / "data";
  REQUIRE(synth(data, kSmallTask).code == 0);

  const Result r = train(data, dir / "ck", {"--epochs", "4", "--beta", "0.13", "--fusion-mode", "adaava_audio"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("beta=0.13") != std::string::npos);
  const json echo = json::parse(slurp(dir / "ck" / "run_config.json"));
  CHECK(echo.at("model").at("beta") == 0.13);
  CHECK(echo.at("model").at("audio_in_dim") == 16);
  CHECK(fs::exists(dir / "ck" / "best.avck"));
  CHECK(fs::exists(dir / "ck" / "last.avck"));
  CHECK(!fs::exists(dir / "ck" / "avfuse.lock"));
  std::vector<double> val;
  for (const json& rec : read_jsonl(dir / "ck" / "metrics.jsonl")) {
    if (!rec.at("val_loss").is_null()) val.push_back(rec.at("val_loss"));
  }
  REQUIRE(val.size() == 4);
  CHECK(val.back() < val.front());

  // A second fresh run into the same directory is refused.
  CHECK(train(data, dir / "ck", {"--epochs", "1"}).code == 1);

  const std::string ckpt = (dir / "ck" / "best.avck").string();
  const std::string manifest = (data / "eval.jsonl").string();
  const Result beam1 = invoke({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--beam", "1", "--report",
                               (dir / "r1" / "report.json").string()});
  REQUIRE_MESSAGE(beam1.code == 0, beam1.err);
  const Result greedy = invoke({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--greedy", "--report",
                                (dir / "r2" / "report.json").string()});
  REQUIRE(greedy.code == 0);
  CHECK(slurp(dir / "r1" / "report.json") == slurp(dir / "r2" / "report.json"));
  CHECK(slurp(dir / "r1" / "candidates.jsonl") == slurp(dir / "r2" / "candidates.jsonl"));

  const Result beam3 = invoke({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--report",
                               (dir / "r3" / "report.json").string()});
  REQUIRE(beam3.code == 0);
  const json report = json::parse(slurp(dir / "r3" / "report.json"));
  for (const char* k : {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider"}) CHECK(report.contains(k));
  CHECK(json::parse(slurp(dir / "r3" / "eval_config.json")).at("beam") == 3);

  {
    std::ofstream f(dir / "other.json");
    f << R"({"model": {"d": 64, "heads": 2, "encoder_blocks": 1, "decoder_blocks": 1}})";
  }
  const Result mismatch = invoke({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--config",
                                  (dir / "other.json").string(), "--report", (dir / "r4" / "report.json").string()});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("parameter shape differences") != std::string::npos);
  CHECK(mismatch.err.find("decoder.embed") != std::string::npos);

  const std::string audio = (data / "features" / "eval_00000_audio.avf").string();
  const std::string visual = (data / "features" / "eval_00000_visual.avf").string();
  const Result inf1 = invoke({"infer", "--checkpoint", ckpt, "--audio", audio, "--visual", visual, "--trace"});
  REQUIRE_MESSAGE(inf1.code == 0, inf1.err);
  const Result inf2 = invoke({"infer", "--checkpoint", ckpt, "--audio", audio, "--visual", visual, "--trace"});
  CHECK(inf1.out == inf2.out);
  std::istringstream lines(inf1.out);
  std::string word;
  std::size_t densities = 0;
  while (lines >> word) {
    if (word == "audio_mask_density" || word == "visual_mask_density") {
      double v = -1;
      lines >> v;
      CHECK((v >= 0.0 && v <= 1.0));
      ++densities;
    }
  }
  CHECK(densities > 0);
  const Result novis = invoke({"infer", "--checkpoint", ckpt, "--audio", audio});
  CHECK(novis.code == 1);
  CHECK(novis.err.find("adaava_audio") != std::string::npos);
}

TEST_CASE("train rejects visual-dependent modes without visual features") {
  testing::TempDir dir("cli_novis");
  const fs::path data = dir / "data";
  REQUIRE(synth(data, kSmallTask).code == 0);
  DatasetManifest m = load_manifest(data / "train.jsonl");
  for (auto& rec : m.records) rec.visual_features.reset();
  write_manifest(m, data / "train.jsonl");
  const Result r = train(data, dir / "ck", {"--fusion-mode", "video_only", "--epochs", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("video_only") != std::string::npos);
  CHECK(!fs::exists(dir / "ck"));
  CHECK(train(data, dir / "ck", {"--fusion-mode", "audio_only", "--epochs", "1"}).code == 0);
}

TEST_CASE("train lists every config problem at once") {
  testing::TempDir dir("cli_invalid");
  const Result r = invoke({"train", "--set", "model.beta=2", "--set", "train.batch_size=0", "--checkpoint-dir",
                           (dir / "ck").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("train_manifest is required") != std::string::npos);
  CHECK(r.err.find("eval_manifest is required") != std::string::npos);
  CHECK(r.err.find("beta") != std::string::npos);
  CHECK(r.err.find("batch_size") != std::string::npos);
}

TEST_CASE("waveform clips through an audio_only model") {
  testing::TempDir dir("cli_wav");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.1);
  Waveform silence{std::vector<double>(32000, 0.0), 32000};
  Waveform hiss{std::vector<double>(32000), 32000};
  for (double& v : hiss.samples) v = noise(rng);
  write_wav(silence, dir / "silence.wav");
  write_wav(hiss, dir / "hiss.wav");
  {
    std::ofstream f(dir / "train.jsonl");
    f << R"({"id": "s", "audio": "silence.wav", "captions": ["nothing can be heard"]})" << '\n';
    f << R"({"id": "h", "audio": "hiss.wav", "captions": ["steady hiss of static"]})" << '\n';
  }
  const Result r = invoke({"train", "--train-manifest", (dir / "train.jsonl").string(), "--eval-manifest",
                           (dir / "train.jsonl").string(), "--checkpoint-dir", (dir / "ck").string(),
                           "--fusion-mode", "audio_only", "--epochs", "2", "--set", "model.d=32", "--set",
                           "model.heads=2", "--set", "model.encoder_blocks=1", "--set", "model.decoder_blocks=1",
                           "--set", "train.warmup_epochs=1", "--quiet"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const Result inf = invoke({"infer", "--checkpoint", (dir / "ck" / "last.avck").string(), "--audio",
                             (dir / "silence.wav").string(), "--trace"});
  CHECK_MESSAGE(inf.code == 0, inf.err);
  CHECK(inf.out.find("no confidence gate") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
  const Result ok = invoke({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  std::istringstream lines(ok.out);
  std::string word;
  std::size_t groups = 0;
  while (lines >> word) {
    if (word == "max_rel_error") {
      double v = 1;
      lines >> v;
      CHECK(v < 1e-5);
      ++groups;
    }
  }
  CHECK(groups > 30);
  CHECK(ok.out.find("conf.weight") != std::string::npos);
  for (const char* seed : {"1", "2"}) CHECK(invoke({"gradcheck", "--seed", seed}).code == 0);
  const Result crossing = invoke({"gradcheck", "--no-exclusion", "--near-threshold"});
  CHECK(crossing.code == 2);
  CHECK(crossing.out.find("FAIL") != std::string::npos);
}
