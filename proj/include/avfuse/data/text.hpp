// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace avfuse {

/// Lowercases, strips Unicode punctuation (general categories P*) and
/// splits on whitespace. Input is UTF-8.
std::vector<std::string> normalize_caption(std::string_view raw);

/// Word-level vocabulary with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  /// Tokens with count >= min_count, ordered by descending count then
  /// lexicographically, receive ids after the reserved ones.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          int min_count = 1);

  /// Rebuilds a vocabulary from its id-ordered word list (reserved ids
  /// excluded), as stored in checkpoints.
  static Vocabulary from_words(const std::vector<std::string>& words);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  /// Non-reserved words in id order.
  std::vector<std::string> words() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  Vocabulary();
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
  std::vector<int> ids;     // padded to max_len
  std::size_t length = 0;   // tokens before padding, including sos and eos
};

/// [sos] + ids + [eos], truncated to max_len with eos kept last, then
/// padded with pad ids up to max_len.
TokenSequence encode_caption(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             std::size_t max_len);

/// Inverse of encode_caption: skips a leading sos, stops at eos or pad.
std::vector<std::string> decode_caption(std::span<const int> ids, const Vocabulary& vocab);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace avfuse
