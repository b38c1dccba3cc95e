// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "demoseg/diffops.hpp"

namespace demoseg {

/// Named trainable tensors keyed by module path ("enabling.decoupler.t1.conv0.weight").
///
/// Initial values depend only on (seed, name), never on registration order.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Throws ContractViolation on a duplicate name.
  const Var<T>& add(const std::string& name, Tensor<T> init);
  /// He-normal init for a leaky rectifier: std = sqrt(2 / ((1 + slope^2) * fan_in)).
  const Var<T>& kaiming(const std::string& name, Shape shape, std::int64_t fan_in, double slope = 0.01);
  const Var<T>& constant(const std::string& name, Shape shape, T value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws ContractViolation for unknown names.
  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);

  std::size_t size() const { return params_.size(); }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return params_; }
  std::vector<std::pair<std::string, Var<T>>>& entries() { return params_; }

  /// Total element count over parameters whose name starts with `prefix`.
  std::int64_t count(std::string_view prefix = {}) const;

  void zero_grad();
  /// Frozen parameters record no backward graph (inference).
  void set_trainable(bool on) {
    for (auto& e : params_) e.second.node()->requires_grad = on;
  }

  void write(std::ostream& os) const;
  /// Reads values into already-registered parameters; names and shapes must match.
  void read(std::istream& is);

  /// Same names and values at a different precision.
  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out(seed_);
    for (const auto& [name, v] : params_) out.add(name, v.value().template cast<U>());
    return out;
  }

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// FNV-1a, stable across platforms; used to derive per-name seeds.
std::uint64_t stable_hash(std::string_view s);

}  // namespace demoseg
