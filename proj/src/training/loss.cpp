// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/training/loss.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "avfuse/errors.hpp"

namespace avfuse {

Var label_smoothing_ce(const Var& logits, std::span<const int> targets, double eps, int pad_id) {
  const Tensor& z = logits.value();
  const std::size_t rows = z.rows(), v = z.cols();
  if (z.rank() != 2 || rows != targets.size()) {
    throw DimensionError("label_smoothing_ce: logits " + shape_to_string(z.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!(eps >= 0.0 && eps < 1.0)) throw DomainError("label_smoothing_ce: eps must lie in [0, 1)");
  if (v < 2) throw DomainError("label_smoothing_ce: need at least two classes");
  const double off = eps / static_cast<double>(v - 1);
  const double on = 1.0 - eps;

  // Saved softmax probabilities for the backward pass.
  auto probs = std::make_shared<Tensor>(Shape{rows, v});
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw ValidationError("label_smoothing_ce: target " + std::to_string(t) + " outside " +
                            std::to_string(v) + " classes");
    }
    const double* zr = z.row(r);
    double mx = zr[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(zr[j] - mx);
    const double log_z = mx + std::log(s);
    double sum_logp = 0.0;
    double* pr = probs->row(r);
    for (std::size_t j = 0; j < v; ++j) {
      const double logp = zr[j] - log_z;
      sum_logp += logp;
      pr[j] = std::exp(logp);
    }
    const double logp_t = zr[t] - log_z;
    total -= on * logp_t + off * (sum_logp - logp_t);
    ++counted;
  }
  if (counted == 0) throw DomainError("label_smoothing_ce: every position is padding");
  const double inv = 1.0 / static_cast<double>(counted);
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape().record(
      "label_smoothing_ce", Tensor::scalar(total * inv), {logits},
      [logits, probs, tgt = std::move(tgt), on, off, inv, pad_id, v](Tape& tape, const Tensor& g) {
        Tensor* gz = tape.grad_sink(logits);
        if (!gz) return;
        const double scale = g.item() * inv;
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (tgt[r] == pad_id) continue;
          const double* pr = probs->row(r);
          double* gr = gz->row(r);
          // d/dz of -sum_j q_j log p_j is p - q since sum_j q_j = 1.
          for (std::size_t j = 0; j < v; ++j) {
            const double q = static_cast<int>(j) == tgt[r] ? on : off;
            gr[j] += scale * (pr[j] - q);
          }
        }
      });
}

}  // namespace avfuse
