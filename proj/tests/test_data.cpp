// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "avfuse/data/feature_file.hpp"
#include "avfuse/data/manifest.hpp"
#include "avfuse/data/synthetic.hpp"
#include "avfuse/data/text.hpp"
#include "avfuse/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace avfuse;
using avfuse::testing::TempDir;
namespace fs = std::filesystem;

namespace {

using Tokens = std::vector<std::string>;

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("normalize_caption") {
  CHECK(normalize_caption("A Dog Barks!") == Tokens{"a", "dog", "barks"});
  CHECK(normalize_caption("").empty());
  CHECK(normalize_caption("jackhammer, running.") == Tokens{"jackhammer", "running"});
  // Unicode punctuation and uppercase letters beyond ASCII.
  CHECK(normalize_caption("\xC2\xBF" "Qu\xC3\x89? \xE2\x80\x9CRain\xE2\x80\x9D \xE2\x80\x94 falls")
        == Tokens{"qué", "rain", "falls"});
  // Symbols ($, +) are not punctuation; hyphen and apostrophe are.
  CHECK(normalize_caption("a $5 dog's+ well-known   bark") ==
        Tokens{"a", "$5", "dogs+", "wellknown", "bark"});
  CHECK(normalize_caption(" ... !!! ").empty());
}

TEST_CASE("build_vocabulary ordering and min_count") {
  const Vocabulary v = Vocabulary::build({{"a", "a", "b"}}, 1);
  CHECK(v.size() == 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK(v.token(Vocabulary::kSos) == "<sos>");

  const Vocabulary v2 = Vocabulary::build({{"a", "a", "b"}}, 2);
  CHECK(v2.contains("a"));
  CHECK_FALSE(v2.contains("b"));
  CHECK(v2.id("b") == Vocabulary::kUnk);

  // Frequency descending, then lexicographic.
  const Vocabulary v3 = Vocabulary::build({{"z", "y", "y"}, {"x", "z", "w"}}, 1);
  CHECK(v3.words() == Tokens{"y", "z", "w", "x"});

  CHECK_THROWS_AS(Vocabulary::build({}, 1), ValidationError);
  CHECK_THROWS_AS(Vocabulary::build({{"a"}}, 0), ConfigError);
}

TEST_CASE("build_vocabulary is independent of corpus order") {
  std::mt19937_64 rng(3);
  std::vector<Tokens> corpus;
  const Tokens words{"dog", "cat", "rain", "bell", "motor", "a", "the", "hums"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(1, 6);
  for (int i = 0; i < 40; ++i) {
    Tokens c;
    for (std::size_t k = len(rng); k > 0; --k) c.push_back(words[pick(rng)]);
    corpus.push_back(c);
  }
  auto shuffled = corpus;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(Vocabulary::build(corpus, 1) == Vocabulary::build(shuffled, 1));
  CHECK(Vocabulary::build(corpus, 1) == Vocabulary::from_words(Vocabulary::build(corpus, 1).words()));
}

TEST_CASE("encode_caption") {
  const Vocabulary v = Vocabulary::build({{"dog", "barks"}}, 1);
  const TokenSequence empty = encode_caption({}, v, 5);
  CHECK(empty.ids == std::vector<int>{1, 2, 0, 0, 0});
  CHECK(empty.length == 2);

  const TokenSequence dog = encode_caption({"dog"}, v, 5);
  CHECK(dog.ids == std::vector<int>{1, v.id("dog"), 2, 0, 0});
  CHECK(dog.length == 3);

  // Truncation keeps sos and eos.
  const TokenSequence cut = encode_caption({"dog", "barks", "dog", "barks"}, v, 4);
  CHECK(cut.ids == std::vector<int>{1, v.id("dog"), v.id("barks"), 2});
  CHECK(cut.length == 4);

  CHECK_THROWS_AS(encode_caption({}, v, 2), ConfigError);
}

TEST_CASE("encode/decode round trip for in-vocabulary captions") {
  std::mt19937_64 rng(4);
  const Tokens words{"a", "dog", "barks", "loudly", "motor", "hums", "near", "rain"};
  const Vocabulary v = Vocabulary::build({words}, 1);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(0, 9);
  const std::size_t max_len = 12;
  for (int trial = 0; trial < 500; ++trial) {
    Tokens c;
    for (std::size_t k = len(rng); k > 0; --k) c.push_back(words[pick(rng)]);
    const TokenSequence seq = encode_caption(c, v, max_len);
    CHECK(seq.ids.size() == max_len);
    CHECK(decode_caption(seq.ids, v) == c);
  }
}

TEST_CASE("feature file layout and round trip") {
  TempDir dir("ff");
  const fs::path p = dir / "one.avf";
  write_feature_file({Tensor::from_rows({{1.0}}), Modality::kAudio}, p);
  const std::string bytes = read_bytes(p);
  REQUIRE(bytes.size() == 13 + 4);
  CHECK(bytes.substr(0, 4) == "AVF1");
  CHECK(bytes.substr(4, 4) == std::string("\x01\x00\x00\x00", 4));
  CHECK(bytes.substr(8, 4) == std::string("\x01\x00\x00\x00", 4));
  CHECK(bytes[12] == 0);
  CHECK(bytes.substr(13) == std::string("\x00\x00\x80\x3f", 4));  // 1.0f little-endian
  const FeatureSequence back = read_feature_file(p, Modality::kVisual);
  CHECK(back.modality == Modality::kVisual);
  CHECK(bit_equal(back.values, Tensor::from_rows({{1.0}})));
}

TEST_CASE("feature file round trip is bit-exact for random binary32 values") {
  TempDir dir("ffr");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint32_t> bits;
  std::uniform_int_distribution<std::size_t> ext(0, 9);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = ext(rng), d = ext(rng) + 1;
    Tensor values(Shape{t, d});
    for (double& v : values.data()) {
      float f;
      do {
        f = std::bit_cast<float>(bits(rng));
      } while (!std::isfinite(f));
      v = f;
    }
    if (trial == 0 && values.numel() > 0) values[0] = -0.0;
    const fs::path p = dir / "r.avf";
    write_feature_file({values, Modality::kAudio}, p);
    const Tensor back = read_feature_file(p).values;
    REQUIRE(bit_equal(back, values));
  }
}

TEST_CASE("feature file error paths") {
  TempDir dir("ffe");
  const fs::path p = dir / "bad.avf";
  write_text(p, std::string("AVF2\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x80\x3f", 17));
  try {
    read_feature_file(p);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("\"AVF1\"") != std::string::npos);
  }
  write_text(p, std::string("AVF1\x02\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x80\x3f", 17));
  CHECK_THROWS_WITH_AS(read_feature_file(p), doctest::Contains("truncated"), IoError);
  write_text(p, std::string("AVF1\x01\x00", 6));
  CHECK_THROWS_WITH_AS(read_feature_file(p), doctest::Contains("truncated"), IoError);
  write_text(p, std::string("AVF1\xff\xff\xff\xff\xff\xff\xff\xff\x00", 13));
  CHECK_THROWS_AS(read_feature_file(p), IoError);
  write_text(p, std::string("AVF1\x01\x00\x00\x00\x01\x00\x00\x00\x07\x00\x00\x80\x3f", 17));
  CHECK_THROWS_WITH_AS(read_feature_file(p), doctest::Contains("dtype"), IoError);
  CHECK_THROWS_AS(read_feature_file(dir / "missing.avf"), IoError);
  CHECK_THROWS_AS(write_feature_file({Tensor::from_rows({{1e300}}), Modality::kAudio}, p), IoError);
}

TEST_CASE("load_manifest") {
  TempDir dir("mf");
  write_feature_file({Tensor::from_rows({{1.0, 2.0}}), Modality::kAudio}, dir / "a.avf");
  write_feature_file({Tensor::from_rows({{3.0, 4.0}}), Modality::kVisual}, dir / "v.avf");
  const std::string good =
      R"({"id": "x1", "audio": "a.avf", "visual_features": "v.avf", "captions": ["A dog barks."]})";

  write_text(dir / "one.jsonl", good + "\n");
  const DatasetManifest m = load_manifest(dir / "one.jsonl");
  REQUIRE(m.size() == 1);
  CHECK(m.records[0].id == "x1");
  CHECK(m.records[0].audio == dir / "a.avf");
  CHECK(m.has_visual());

  write_text(dir / "nocap.jsonl", R"({"id": "x1", "audio": "a.avf"})" "\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "nocap.jsonl"),
                       doctest::Contains("line 1: missing field \"captions\""), ValidationError);

  const std::string dangling = R"({"id": "x2", "audio": "nowhere.avf", "captions": ["x"]})";
  const std::string good3 = R"({"id": "x3", "audio": "a.avf", "captions": ["b"]})";
  write_text(dir / "three.jsonl", good + "\n" + dangling + "\n" + good3 + "\n");
  try {
    load_manifest(dir / "three.jsonl");
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2:") != std::string::npos);
    CHECK(msg.find("line 1:") == std::string::npos);
    CHECK(msg.find("line 3:") == std::string::npos);
  }

  const std::string six =
      R"({"id": "x4", "audio": "a.avf", "captions": ["a","b","c","d","e","f"]})";
  write_text(dir / "six.jsonl", six + "\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "six.jsonl"), doctest::Contains("at most 5"),
                       ValidationError);

  // Order preserving; write/load round trip.
  write_text(dir / "order.jsonl", good3 + "\n\n" + good + "\n");
  const DatasetManifest o = load_manifest(dir / "order.jsonl");
  REQUIRE(o.size() == 2);
  CHECK(o.records[0].id == "x3");
  CHECK(o.records[1].line == 3);
  write_manifest(o, dir / "copy.jsonl");
  const DatasetManifest c = load_manifest(dir / "copy.jsonl");
  CHECK(c.records[1].visual_features == o.records[1].visual_features);
  CHECK(c.records[0].captions == o.records[0].captions);
}

TEST_CASE("synthetic task construction") {
  SyntheticTaskSpec spec;
  spec.n_ambiguous_pairs = 0;
  spec.noise_std = 0.0;
  spec.n_sound_variants = 1;
  spec.train_per_class = 2;
  const SyntheticTask clean = generate_synthetic_task(spec);
  // Audio alone separates classes: equal audio iff equal label.
  for (const auto& a : clean.train)
    for (const auto& b : clean.train) CHECK((a.audio == b.audio) == (a.label == b.label));

  SyntheticTaskSpec paired;
  paired.noise_std = 0.0;
  const SyntheticTask p = generate_synthetic_task(paired);
  for (int pair = 0; pair < paired.n_ambiguous_pairs; ++pair) {
    CHECK(bit_equal(p.audio_prototypes[2 * pair], p.audio_prototypes[2 * pair + 1]));
    CHECK(max_abs_diff(p.visual_prototypes[2 * pair], p.visual_prototypes[2 * pair + 1]) > 0.0);
  }
  // Same-variant examples of paired classes: identical audio, different visual;
  // captions differ in exactly one word.
  const auto& a = p.train[0];
  const auto& b = p.train[1];
  REQUIRE(a.label == 0);
  REQUIRE(b.label == 1);
  CHECK(bit_equal(a.audio, b.audio));
  CHECK_FALSE(a.visual == b.visual);
  const Tokens ta = normalize_caption(a.caption), tb = normalize_caption(b.caption);
  REQUIRE(ta.size() == tb.size());
  int diffs = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) diffs += ta[i] != tb[i];
  CHECK(diffs == 1);
  CHECK(p.train.size() == 8u * 24u);
  CHECK(p.eval.size() == 8u * 8u);
}

TEST_CASE("synthetic task determinism and validation") {
  SyntheticTaskSpec spec;
  spec.seed = 42;
  const SyntheticTask a = generate_synthetic_task(spec);
  const SyntheticTask b = generate_synthetic_task(spec);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(bit_equal(a.train[i].audio, b.train[i].audio));
    CHECK(bit_equal(a.train[i].visual, b.train[i].visual));
    CHECK(a.train[i].caption == b.train[i].caption);
  }
  TempDir d1("syn1"), d2("syn2");
  write_synthetic_task(a, d1.path());
  write_synthetic_task(b, d2.path());
  CHECK(read_bytes(d1 / "train.jsonl") == read_bytes(d2 / "train.jsonl"));
  CHECK(read_bytes(d1.path() / "features" / "eval_00003_audio.avf") ==
        read_bytes(d2.path() / "features" / "eval_00003_audio.avf"));
  const DatasetManifest m = load_manifest(d1 / "train.jsonl");
  CHECK(m.size() == a.train.size());
  CHECK(bit_equal(read_feature_file(m.records[5].audio).values, a.train[5].audio));

  SyntheticTaskSpec bad;
  bad.n_classes = 3;
  bad.n_ambiguous_pairs = 2;
  CHECK_THROWS_AS(generate_synthetic_task(bad), ConfigError);
  bad = SyntheticTaskSpec{};
  bad.noise_std = -1.0;
  CHECK_THROWS_AS(generate_synthetic_task(bad), ConfigError);
}
