// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "avfuse/data/manifest.hpp"
#include "json.hpp"

namespace avfuse {

using Tokens = std::vector<std::string>;

struct EvalItem {
  Tokens candidate;
  std::vector<Tokens> references;  // 1..5
};

using EvalCorpus = std::vector<EvalItem>;

/// Corpus BLEU_1..n_max: clipped n-gram precision pooled over the corpus,
/// geometric mean over orders 1..n, brevity penalty exp(1 - r/c) when c < r
/// with r the summed closest reference lengths (shorter wins ties). No
/// smoothing: an order without matches makes that BLEU_n and all higher 0.
std::vector<double> bleu(const EvalCorpus& corpus, std::size_t n_max = 4);

/// Mean over items of the best LCS F-measure against any reference, with
/// P = LCS / |candidate| and R = LCS / |reference|.
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

/// CIDEr-D: tf-idf n-gram vectors (n = 1..4, document frequency over the
/// references of each item), clipped cosine, gaussian length penalty with
/// sigma 6, averaged over orders and references, times 10, mean over items.
/// Needs at least two items.
double cider_d(const EvalCorpus& corpus, double sigma = 6.0);

/// Fraction of items whose candidate equals one of its references.
double exact_match(const EvalCorpus& corpus);

struct MetricReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider = 0.0;
  double exact_match = 0.0;
  std::size_t corpus_size = 0;

  nlohmann::json to_json() const;
};

MetricReport compute_report(const EvalCorpus& corpus);

/// Candidates file: one {"id": ..., "caption": ...} object per line.
struct Candidate {
  std::string id;
  std::string caption;
};
std::vector<Candidate> read_candidates(const std::filesystem::path& path);
void write_candidates(const std::vector<Candidate>& candidates, const std::filesystem::path& path);

/// Pairs every manifest record with its candidate after normalising all
/// text. Missing or unknown ids raise ValidationError listing them.
EvalCorpus build_corpus(const std::vector<Candidate>& candidates, const DatasetManifest& references);

MetricReport evaluate(const std::filesystem::path& candidates, const std::filesystem::path& manifest);

}  // namespace avfuse
