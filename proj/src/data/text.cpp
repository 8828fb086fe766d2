// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/data/text.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <map>

#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(buf, len, U8_MAX_LENGTH, c, error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

std::vector<std::string> normalize_caption(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  const auto* s = reinterpret_cast<const uint8_t*>(raw.data());
  const auto length = static_cast<int32_t>(raw.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    if (c < 0) continue;  // ill-formed byte sequence
    if (u_isUWhiteSpace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (u_ispunct(c)) continue;
    append_utf8(current, u_tolower(c));
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<sos>");
  add("<eos>");
  add("<unk>");
}

void Vocabulary::add(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, int min_count) {
  if (corpus.empty()) throw ValidationError("build_vocabulary: empty corpus");
  if (min_count < 1) throw ConfigError("build_vocabulary: min_count must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& caption : corpus)
    for (const auto& tok : caption) ++counts[tok];
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [tok, n] : kept) {
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (v.contains(w)) throw ValidationError("vocabulary: duplicate word '" + w + "'");
    v.add(w);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DomainError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

std::vector<std::string> Vocabulary::words() const {
  return {tokens_.begin() + kNumReserved, tokens_.end()};
}

TokenSequence encode_caption(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             std::size_t max_len) {
  if (max_len < 3) throw ConfigError("encode_caption: max_len must be >= 3");
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kSos);
  const std::size_t keep = std::min(tokens.size(), max_len - 2);
  for (std::size_t i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(tokens[i]));
  seq.ids.push_back(Vocabulary::kEos);
  seq.length = seq.ids.size();
  seq.ids.resize(max_len, Vocabulary::kPad);
  return seq;
}

std::vector<std::string> decode_caption(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  std::size_t i = 0;
  if (!ids.empty() && ids[0] == Vocabulary::kSos) i = 1;
  for (; i < ids.size(); ++i) {
    if (ids[i] == Vocabulary::kEos || ids[i] == Vocabulary::kPad) break;
    out.push_back(vocab.token(ids[i]));
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace avfuse
