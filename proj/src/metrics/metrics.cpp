// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "avfuse/data/text.hpp"
#include "avfuse/errors.hpp"

namespace avfuse {

namespace {

// n-grams are keyed by their words joined with a separator that cannot
// occur inside a normalised token.
using Counts = std::unordered_map<std::string, double>;

Counts ngram_counts(const Tokens& words, std::size_t n) {
  Counts out;
  if (words.size() < n) return out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += words[i + k];
    }
    out[key] += 1.0;
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_corpus(const EvalCorpus& corpus, const char* metric) {
  if (corpus.empty()) throw DomainError(std::string(metric) + ": empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].references.empty()) {
      throw ValidationError(std::string(metric) + ": item " + std::to_string(i) + " has no references");
    }
  }
}

}  // namespace

std::vector<double> bleu(const EvalCorpus& corpus, std::size_t n_max) {
  check_corpus(corpus, "bleu");
  if (n_max == 0) throw ConfigError("bleu: n_max must be >= 1");
  std::vector<double> matched(n_max, 0.0), total(n_max, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (const EvalItem& item : corpus) {
    const double c = static_cast<double>(item.candidate.size());
    cand_len += c;
    double closest = static_cast<double>(item.references.front().size());
    for (const Tokens& r : item.references) {
      const double len = static_cast<double>(r.size());
      const double d = std::abs(len - c), best = std::abs(closest - c);
      if (d < best || (d == best && len < closest)) closest = len;
    }
    ref_len += closest;
    for (std::size_t n = 1; n <= n_max; ++n) {
      const Counts cand = ngram_counts(item.candidate, n);
      Counts max_ref;
      for (const Tokens& r : item.references) {
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : cand) {
        total[n - 1] += k;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }
  const double bp = cand_len == 0.0 ? 0.0 : (cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0);
  std::vector<double> out(n_max, 0.0);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < n_max; ++n) {
    if (matched[n] == 0.0 || total[n] == 0.0) zero = true;
    if (zero) continue;
    log_sum += std::log(matched[n] / total[n]);
    out[n] = bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

double rouge_l(const EvalCorpus& corpus, double beta) {
  check_corpus(corpus, "rouge_l");
  const double b2 = beta * beta;
  double sum = 0.0;
  for (const EvalItem& item : corpus) {
    double best = 0.0;
    for (const Tokens& r : item.references) {
      const double lcs = static_cast<double>(lcs_length(item.candidate, r));
      if (lcs == 0.0) continue;
      const double p = lcs / static_cast<double>(item.candidate.size());
      const double rec = lcs / static_cast<double>(r.size());
      best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
    }
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

double cider_d(const EvalCorpus& corpus, double sigma) {
  check_corpus(corpus, "cider");
  if (corpus.size() < 2) {
    throw DomainError("cider: needs at least two items; with one document every n-gram has idf log(1/1) = 0");
  }
  constexpr std::size_t kOrders = 4;
  // Document frequency: in how many items' reference sets each n-gram appears.
  std::array<std::unordered_map<std::string, double>, kOrders> df;
  for (const EvalItem& item : corpus) {
    for (std::size_t n = 1; n <= kOrders; ++n) {
      std::set<std::string> seen;
      for (const Tokens& r : item.references) {
        for (const auto& [g, k] : ngram_counts(r, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[n - 1][g] += 1.0;
    }
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));

  struct Vec {
    std::array<Counts, kOrders> w;
    std::array<double, kOrders> norm{};
    double length = 0.0;
  };
  const auto vectorise = [&](const Tokens& words) {
    Vec v;
    v.length = static_cast<double>(words.size());
    for (std::size_t n = 1; n <= kOrders; ++n) {
      for (const auto& [g, tf] : ngram_counts(words, n)) {
        auto it = df[n - 1].find(g);
        const double d = it == df[n - 1].end() ? 0.0 : it->second;
        const double x = tf * (log_n - std::log(std::max(1.0, d)));
        v.w[n - 1][g] = x;
        v.norm[n - 1] += x * x;
      }
      v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
    }
    return v;
  };

  double sum = 0.0;
  for (const EvalItem& item : corpus) {
    const Vec cand = vectorise(item.candidate);
    double item_score = 0.0;
    for (const Tokens& r : item.references) {
      const Vec ref = vectorise(r);
      const double delta = cand.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      double per_ref = 0.0;
      for (std::size_t n = 0; n < kOrders; ++n) {
        if (cand.norm[n] == 0.0 || ref.norm[n] == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cand.w[n]) {
          auto it = ref.w[n].find(g);
          if (it != ref.w[n].end()) dot += std::min(x, it->second) * it->second;
        }
        per_ref += dot / (cand.norm[n] * ref.norm[n]) * penalty;
      }
      item_score += per_ref / static_cast<double>(kOrders);
    }
    sum += 10.0 * item_score / static_cast<double>(item.references.size());
  }
  return sum / static_cast<double>(corpus.size());
}

double exact_match(const EvalCorpus& corpus) {
  check_corpus(corpus, "exact_match");
  std::size_t hits = 0;
  for (const EvalItem& item : corpus) {
    if (std::find(item.references.begin(), item.references.end(), item.candidate) != item.references.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

nlohmann::json MetricReport::to_json() const {
  return {{"bleu_1", bleu[0]}, {"bleu_2", bleu[1]}, {"bleu_3", bleu[2]}, {"bleu_4", bleu[3]},
          {"rouge_l", rouge_l}, {"cider", cider},   {"exact_match", exact_match},
          {"corpus_size", corpus_size}};
}

MetricReport compute_report(const EvalCorpus& corpus) {
  MetricReport r;
  const auto b = bleu(corpus, 4);
  std::copy(b.begin(), b.end(), r.bleu.begin());
  r.rouge_l = rouge_l(corpus);
  r.cider = cider_d(corpus);
  r.exact_match = exact_match(corpus);
  r.corpus_size = corpus.size();
  return r;
}

std::vector<Candidate> read_candidates(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open candidates file " + path.string());
  std::vector<Candidate> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError(path.string() + ": no candidates");
  return out;
}

void write_candidates(const std::vector<Candidate>& candidates, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const Candidate& c : candidates) os << nlohmann::json{{"id", c.id}, {"caption", c.caption}}.dump() << '\n';
}

EvalCorpus build_corpus(const std::vector<Candidate>& candidates, const DatasetManifest& references) {
  if (candidates.empty()) throw ValidationError("no candidates to evaluate");
  std::map<std::string, const Candidate*> by_id;
  std::vector<std::string> duplicate, unknown, missing;
  for (const Candidate& c : candidates) {
    if (!by_id.emplace(c.id, &c).second) duplicate.push_back(c.id);
    if (!references.find(c.id)) unknown.push_back(c.id);
  }
  EvalCorpus corpus;
  for (const ManifestRecord& r : references.records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      missing.push_back(r.id);
      continue;
    }
    EvalItem item;
    item.candidate = normalize_caption(it->second->caption);
    for (const auto& c : r.captions) item.references.push_back(normalize_caption(c));
    corpus.push_back(std::move(item));
  }
  std::string msg;
  const auto list = [&msg](const char* what, const std::vector<std::string>& ids) {
    if (ids.empty()) return;
    msg += std::string(msg.empty() ? "" : "\n") + what + ":";
    for (const auto& id : ids) msg += " " + id;
  };
  list("missing candidates for ids", missing);
  list("candidates for ids not in the manifest", unknown);
  list("duplicate candidate ids", duplicate);
  if (!msg.empty()) throw ValidationError(msg);
  return corpus;
}

MetricReport evaluate(const std::filesystem::path& candidates, const std::filesystem::path& manifest) {
  return compute_report(build_corpus(read_candidates(candidates), load_manifest(manifest)));
}

}  // namespace avfuse
