// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to every requires_grad leaf.
class Gradients {
 public:
  const Tensor& of(const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Ordered record of operations for reverse-mode differentiation.
///
/// One tape belongs to one forward/backward pass and must not be shared
/// between threads. Ops whose inputs need no gradient are recorded without a
/// backward closure, so a tape built only from constants is a plain forward
/// evaluator.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value);

  /// Reverse sweep from a scalar output.
  Gradients backward(const Var& output);

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of `v`, or nullptr when `v` needs no gradient.
  /// Only meaningful inside a backward closure.
  Tensor* grad_sink(const Var& v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

/// Differentiable operations. All binary elementwise ops require equal
/// shapes; broadcasting is explicit (add_bias).
namespace ag {

Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);
Var scale(const Var& x, double c);
Var one_minus(const Var& x);
/// Elementwise product with a constant tensor (no gradient to the constant).
Var mul_const(const Var& x, const Tensor& c);
Var sigmoid(const Var& x);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
Var softmax_lastdim(const Var& x);
Var sum(const Var& x);
/// sum(x * w) for a constant weight tensor.
Var weighted_sum(const Var& x, const Tensor& w);
/// [a ; b] along the last dimension; a and b have equal row counts.
Var concat_cols(const Var& a, const Var& b);
/// Rows of a followed by rows of b; equal widths.
Var concat_rows(const Var& a, const Var& b);
/// out[i] = x[index[i]] (rows). Gradient scatters back additively.
Var gather_rows(const Var& x, std::span<const std::size_t> index);
/// Inverted dropout with drop probability p. Identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);

}  // namespace ag

}  // namespace avfuse
