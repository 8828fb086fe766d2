// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/inference/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avfuse/errors.hpp"

namespace avfuse {

Tensor log_softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* z = logits.row(r);
    double mx = z[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(z[j] - mx);
    const double log_z = mx + std::log(s);
    double* o = out.row(r);
    for (std::size_t j = 0; j < v; ++j) o[j] = z[j] - log_z;
  }
  return out;
}

Tensor CaptionerScorer::next_log_probs(std::span<const std::vector<int>> prefixes) const {
  return log_softmax_rows(model_.next_token_logits(encoded_, prefixes));
}

double hypothesis_score(const Hypothesis& h, bool length_norm) {
  if (!length_norm || h.emitted() == 0) return h.log_prob;
  return h.log_prob / static_cast<double>(h.emitted());
}

namespace {

void check_options(const DecodeOptions& o, const StepScorer& scorer) {
  if (o.max_len < 2) throw ConfigError("decoding needs max_len >= 2");
  const auto v = static_cast<int>(scorer.vocab_size());
  if (o.sos < 0 || o.sos >= v || o.eos < 0 || o.eos >= v) {
    throw ConfigError("sos/eos ids outside the scorer vocabulary");
  }
}

// Token indices of one row sorted by log probability, lowest id first on ties.
std::vector<int> ranked_tokens(const double* row, std::size_t v, std::size_t k) {
  std::vector<int> idx(v);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, v);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [row](int a, int b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  idx.resize(k);
  return idx;
}

bool better(const Hypothesis& a, const Hypothesis& b, bool length_norm) {
  const double sa = hypothesis_score(a, length_norm);
  const double sb = hypothesis_score(b, length_norm);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis greedy_decode(const StepScorer& scorer, const DecodeOptions& options) {
  check_options(options, scorer);
  Hypothesis h{{options.sos}, 0.0, false};
  while (h.tokens.size() < options.max_len) {
    const std::vector<std::vector<int>> prefix = {h.tokens};
    const Tensor lp = scorer.next_log_probs(prefix);
    const int best = ranked_tokens(lp.row(0), scorer.vocab_size(), 1).front();
    h.tokens.push_back(best);
    h.log_prob += lp(0, static_cast<std::size_t>(best));
    if (best == options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

std::vector<Hypothesis> beam_search(const StepScorer& scorer, std::size_t beam,
                                    const DecodeOptions& options, bool length_norm,
                                    std::size_t max_beam) {
  if (beam < 1) throw ConfigError("beam size must be >= 1");
  if (beam > max_beam) {
    throw ConfigError("beam size " + std::to_string(beam) + " exceeds the maximum " + std::to_string(max_beam));
  }
  check_options(options, scorer);
  const auto order = [length_norm](const Hypothesis& a, const Hypothesis& b) { return better(a, b, length_norm); };

  std::vector<Hypothesis> live = {{{options.sos}, 0.0, false}};
  std::vector<Hypothesis> pool;
  while (!live.empty()) {
    std::vector<std::vector<int>> prefixes;
    for (const Hypothesis& h : live) prefixes.push_back(h.tokens);
    const Tensor lp = scorer.next_log_probs(prefixes);
    std::vector<Hypothesis> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (int t : ranked_tokens(lp.row(i), scorer.vocab_size(), beam)) {
        Hypothesis next = live[i];
        next.tokens.push_back(t);
        next.log_prob += lp(i, static_cast<std::size_t>(t));
        next.finished = t == options.eos;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), order);
    if (candidates.size() > beam) candidates.resize(beam);
    live.clear();
    for (Hypothesis& c : candidates) {
      if (c.finished || c.tokens.size() >= options.max_len) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  std::sort(pool.begin(), pool.end(), order);
  if (pool.size() > beam) pool.resize(beam);
  return pool;
}

}  // namespace avfuse
