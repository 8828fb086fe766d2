// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "avfuse/numerics/autograd.hpp"

namespace avfuse {

/// One independent attention problem inside a packed batch: query rows
/// [q_offset, q_offset + q_len) attend to key/value rows
/// [kv_offset, kv_offset + kv_len).
struct AttentionSegment {
  std::size_t q_offset = 0;
  std::size_t q_len = 0;
  std::size_t kv_offset = 0;
  std::size_t kv_len = 0;
};

struct AttentionLayout {
  std::vector<AttentionSegment> segments;
  /// Optional, one flag per packed key row; nonzero marks padding that
  /// receives a -inf logit. Empty means no padding.
  std::vector<std::uint8_t> kv_padding;
  /// Query i of a segment may only see keys j <= i. Requires q_len == kv_len.
  bool causal = false;

  /// Single segment covering all rows.
  static AttentionLayout single(std::size_t q_len, std::size_t kv_len, bool causal);
};

/// Scaled dot-product attention over already-projected q, k, v (width d),
/// split into `heads` heads of width d / heads. Output has q's shape.
/// A query row whose keys are all masked is a DomainError.
Var attention_core(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout,
                   std::size_t heads, double dropout = 0.0, std::mt19937_64* rng = nullptr);

/// Projection weights of one multi-head attention sublayer. Weights are
/// d x d, biases d.
struct AttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Projections + attention_core + output projection over a packed batch.
Var attention_sublayer(const Var& q_in, const Var& kv_in, const AttentionParams& params,
                       const AttentionLayout& layout, std::size_t heads, double dropout = 0.0,
                       std::mt19937_64* rng = nullptr);

/// Multi-head attention for one query sequence against one key/value
/// sequence. `kv_padding` is empty or holds one flag per kv row.
Var multi_head_attention(const Var& q_in, const Var& kv_in, const AttentionParams& params,
                         std::size_t heads, bool causal,
                         std::span<const std::uint8_t> kv_padding = {});

}  // namespace avfuse
