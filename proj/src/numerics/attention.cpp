// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/numerics/attention.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "avfuse/errors.hpp"

namespace avfuse {

AttentionLayout AttentionLayout::single(std::size_t q_len, std::size_t kv_len, bool causal) {
  AttentionLayout layout;
  layout.segments.push_back({0, q_len, 0, kv_len});
  layout.causal = causal;
  return layout;
}

namespace {

struct AttentionSaved {
  // Per segment, per head: q_len x kv_len probabilities (0 where masked).
  std::vector<std::vector<double>> probs;
  // Same layout; inverted-dropout factors. Empty when dropout is off.
  std::vector<std::vector<double>> keep;
};

void validate(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
              std::size_t heads) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attention: q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()) +
                         " do not agree");
  }
  if (!layout.kv_padding.empty() && layout.kv_padding.size() != k.rows()) {
    throw DimensionError("attention: padding mask has " + std::to_string(layout.kv_padding.size()) +
                         " entries for " + std::to_string(k.rows()) + " key rows");
  }
  for (const auto& s : layout.segments) {
    if (s.q_offset + s.q_len > q.rows() || s.kv_offset + s.kv_len > k.rows()) {
      throw DimensionError("attention: segment exceeds packed rows");
    }
    if (layout.causal && s.q_len != s.kv_len) {
      throw DimensionError("attention: causal attention needs equal query and key lengths, got " +
                           std::to_string(s.q_len) + " and " + std::to_string(s.kv_len));
    }
  }
}

}  // namespace

Var attention_core(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout,
                   std::size_t heads, double dropout, std::mt19937_64* rng) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  validate(qv, kv, vv, layout, heads);
  if (dropout > 0.0 && rng == nullptr) throw UsageError("attention: dropout needs an rng");

  const std::size_t d = qv.cols();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double ninf = -std::numeric_limits<double>::infinity();
  std::bernoulli_distribution keep_dist(1.0 - dropout);

  auto saved = std::make_shared<AttentionSaved>();
  Tensor out(qv.shape());
  std::vector<double> logits;

  for (const auto& seg : layout.segments) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      std::vector<double> probs(seg.q_len * seg.kv_len, 0.0);
      std::vector<double> keep;
      if (dropout > 0.0) {
        keep.resize(probs.size());
        for (double& f : keep) f = keep_dist(*rng) ? 1.0 / (1.0 - dropout) : 0.0;
      }
      logits.assign(seg.kv_len, ninf);
      for (std::size_t i = 0; i < seg.q_len; ++i) {
        const double* qi = qv.row(seg.q_offset + i) + c0;
        const std::size_t limit = layout.causal ? i + 1 : seg.kv_len;
        double mx = ninf;
        for (std::size_t j = 0; j < limit; ++j) {
          const std::size_t kr = seg.kv_offset + j;
          if (!layout.kv_padding.empty() && layout.kv_padding[kr]) {
            logits[j] = ninf;
            continue;
          }
          const double* kj = kv.row(kr) + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          logits[j] = s * scale;
          mx = std::max(mx, logits[j]);
        }
        if (mx == ninf) {
          throw DomainError("attention: query row " + std::to_string(seg.q_offset + i) +
                            " has every key position masked");
        }
        double* p = probs.data() + i * seg.kv_len;
        double sum = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          if (logits[j] == ninf) continue;
          p[j] = std::exp(logits[j] - mx);
          sum += p[j];
        }
        double* o = out.row(seg.q_offset + i) + c0;
        for (std::size_t j = 0; j < limit; ++j) {
          if (logits[j] == ninf) continue;
          p[j] /= sum;
          const double w = keep.empty() ? p[j] : p[j] * keep[i * seg.kv_len + j];
          const double* vj = vv.row(seg.kv_offset + j) + c0;
          for (std::size_t c = 0; c < dh; ++c) o[c] += w * vj[c];
        }
      }
      saved->probs.push_back(std::move(probs));
      if (!keep.empty()) saved->keep.push_back(std::move(keep));
    }
  }

  return q.tape().record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, layout, heads, dh, scale, saved](Tape& t, const Tensor& g) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const Tensor& vv = v.value();
        Tensor* gq = t.grad_sink(q);
        Tensor* gk = t.grad_sink(k);
        Tensor* gv = t.grad_sink(v);
        std::vector<double> dp;
        std::size_t idx = 0;
        for (const auto& seg : layout.segments) {
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const std::size_t c0 = h * dh;
            const std::vector<double>& probs = saved->probs[idx];
            const std::vector<double>* keep = saved->keep.empty() ? nullptr : &saved->keep[idx];
            dp.assign(seg.kv_len, 0.0);
            for (std::size_t i = 0; i < seg.q_len; ++i) {
              const double* gi = g.row(seg.q_offset + i) + c0;
              const double* p = probs.data() + i * seg.kv_len;
              const std::size_t limit = layout.causal ? i + 1 : seg.kv_len;
              double dot = 0.0;
              for (std::size_t j = 0; j < limit; ++j) {
                if (p[j] == 0.0) {
                  dp[j] = 0.0;
                  continue;
                }
                const double kf = keep ? (*keep)[i * seg.kv_len + j] : 1.0;
                const double* vj = vv.row(seg.kv_offset + j) + c0;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dp[j] = s * kf;
                dot += dp[j] * p[j];
                if (gv) {
                  double* gvj = gv->row(seg.kv_offset + j) + c0;
                  const double w = p[j] * kf;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += w * gi[c];
                }
              }
              const double* qi = qv.row(seg.q_offset + i) + c0;
              double* gqi = gq ? gq->row(seg.q_offset + i) + c0 : nullptr;
              for (std::size_t j = 0; j < limit; ++j) {
                if (p[j] == 0.0) continue;
                const double ds = p[j] * (dp[j] - dot) * scale;
                const double* kj = kv.row(seg.kv_offset + j) + c0;
                if (gqi) {
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  double* gkj = gk->row(seg.kv_offset + j) + c0;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Var attention_sublayer(const Var& q_in, const Var& kv_in, const AttentionParams& params,
                       const AttentionLayout& layout, std::size_t heads, double dropout,
                       std::mt19937_64* rng) {
  const Var q = ag::linear(q_in, params.wq, params.bq);
  const Var k = ag::linear(kv_in, params.wk, params.bk);
  const Var v = ag::linear(kv_in, params.wv, params.bv);
  const Var o = attention_core(q, k, v, layout, heads, dropout, rng);
  return ag::linear(o, params.wo, params.bo);
}

Var multi_head_attention(const Var& q_in, const Var& kv_in, const AttentionParams& params,
                         std::size_t heads, bool causal, std::span<const std::uint8_t> kv_padding) {
  const std::size_t d = q_in.value().cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionLayout layout = AttentionLayout::single(q_in.value().rows(), kv_in.value().rows(), causal);
  layout.kv_padding.assign(kv_padding.begin(), kv_padding.end());
  return attention_sublayer(q_in, kv_in, params, layout, heads);
}

}  // namespace avfuse
