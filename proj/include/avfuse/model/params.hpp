// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "avfuse/numerics/autograd.hpp"
#include "avfuse/numerics/tensor.hpp"

namespace avfuse {

/// Named tensors in insertion order.
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  std::vector<std::string> names() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Same names, shapes and bits.
  friend bool operator==(const ParameterStore& a, const ParameterStore& b);
  /// Same names and shapes, values zero.
  ParameterStore zeros_like() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters of one ParameterStore registered as leaves on a tape. Names
/// are bound lazily on first use; `override` substitutes an arbitrary
/// variable for a name (used by gradient checks).
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad = true);

  Var operator()(const std::string& name);
  void override(const std::string& name, const Var& var);
  Tape& tape() const { return tape_; }

  /// Gradient for every parameter in the store; zero for unbound names.
  ParameterStore gradients(const Gradients& grads) const;

 private:
  Tape& tape_;
  const ParameterStore& store_;
  bool requires_grad_;
  std::unordered_map<std::string, Var> bound_;
};

/// Deterministic per-name random stream: the same (seed, name) always
/// yields the same values regardless of which other parameters exist.
std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

}  // namespace avfuse
