// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/model/params.hpp"

#include "avfuse/errors.hpp"

namespace avfuse {

void ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw UsageError("parameter '" + name + "' already exists");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParameterStore::get_mutable(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(name);
  return out;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].first != b.entries_[i].first) return false;
    if (!bit_equal(a.entries_[i].second, b.entries_[i].second)) return false;
  }
  return true;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad)
    : tape_(tape), store_(store), requires_grad_(requires_grad) {}

Var BoundParameters::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var v = tape_.leaf(store_.get(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

void BoundParameters::override(const std::string& name, const Var& var) {
  if (!store_.contains(name)) throw UsageError("unknown parameter '" + name + "'");
  bound_[name] = var;
}

ParameterStore BoundParameters::gradients(const Gradients& grads) const {
  ParameterStore out;
  for (const auto& [name, t] : store_) {
    auto it = bound_.find(name);
    if (it != bound_.end() && grads.contains(it->second)) {
      out.add(name, grads.of(it->second));
    } else {
      out.add(name, Tensor(t.shape()));
    }
  }
  return out;
}

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  // splitmix64 finaliser over the combination
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace avfuse
