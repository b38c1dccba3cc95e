// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/params.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "demoseg/rng.hpp"

namespace demoseg {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'P'};

template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw DataError("parameter stream truncated");
  return v;
}

}  // namespace

std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
const Var<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(name, Var<T>::leaf(std::move(init), true));
  return params_.back().second;
}

template <typename T>
const Var<T>& ParameterStore<T>::kaiming(const std::string& name, Shape shape, std::int64_t fan_in, double slope) {
  Rng rng(seed_ ^ stable_hash(name));
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return add(name, std::move(t));
}

template <typename T>
const Var<T>& ParameterStore<T>::constant(const std::string& name, Shape shape, T value) {
  return add(name, Tensor<T>(std::move(shape), value));
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

template <typename T>
Var<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

template <typename T>
std::int64_t ParameterStore<T>::count(std::string_view prefix) const {
  std::int64_t total = 0;
  for (const auto& [name, v] : params_) {
    if (std::string_view(name).starts_with(prefix)) total += v.value().numel();
  }
  return total;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

template <typename T>
void ParameterStore<T>::write(std::ostream& os) const {
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, sizeof(T));
  write_pod<std::uint64_t>(os, params_.size());
  for (const auto& [name, v] : params_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = v.value().shape();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(v.value().data()), static_cast<std::streamsize>(v.value().size() * sizeof(T)));
  }
}

template <typename T>
void ParameterStore<T>::read(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4)) throw DataError("not a parameter stream");
  if (read_pod<std::uint32_t>(is) != sizeof(T)) throw DataError("parameter stream precision mismatch");
  const auto n = read_pod<std::uint64_t>(is);
  if (n != params_.size()) throw DataError("parameter count mismatch: stream has " + std::to_string(n));
  for (std::uint64_t k = 0; k < n; ++k) {
    std::string name(read_pod<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(read_pod<std::uint32_t>(is));
    for (auto& d : shape) d = read_pod<std::int64_t>(is);
    auto& v = get(name);
    if (v.value().shape() != shape) throw DataError("shape mismatch for parameter '" + name + "'");
    is.read(reinterpret_cast<char*>(v.mutable_value().data()), static_cast<std::streamsize>(v.value().size() * sizeof(T)));
    if (!is) throw DataError("parameter stream truncated in '" + name + "'");
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace demoseg
