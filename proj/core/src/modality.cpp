// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/modality.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <sstream>

#include "demoseg/error.hpp"

namespace demoseg {

namespace {
constexpr std::array<std::string_view, kNumModalities> kNames{"t1", "tc", "t2", "fl"};
constexpr std::array<std::string_view, 3> kPairingNames{"I", "II", "III"};

// partner table [pairing][modality]
constexpr std::array<std::array<Modality, kNumModalities>, 3> kPartners{{
    {Modality::tc, Modality::t1, Modality::fl, Modality::t2},
    {Modality::t2, Modality::fl, Modality::t1, Modality::tc},
    {Modality::fl, Modality::t2, Modality::tc, Modality::t1},
}};
}  // namespace

std::string_view name_of(Modality m) { return kNames[index_of(m)]; }

Modality modality_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return kModalities[i];
  }
  throw ContractViolation("unknown modality '" + std::string(name) + "'");
}

std::array<Modality, 3> others(Modality m) {
  std::array<Modality, 3> out{};
  std::size_t k = 0;
  for (Modality o : kModalities) {
    if (o != m) out[k++] = o;
  }
  return out;
}

ModalityIndicator ModalityIndicator::from_value(unsigned value) {
  if (value == 0 || value > 15) {
    throw ContractViolation("modality indicator must be a non-empty 4-bit set, got " + std::to_string(value));
  }
  return ModalityIndicator(value);
}

ModalityIndicator ModalityIndicator::from_string(std::string_view bits) {
  if (bits.size() != kNumModalities) throw ContractViolation("modality indicator needs 4 bits, got '" + std::string(bits) + "'");
  unsigned v = 0;
  for (char c : bits) {
    if (c != '0' && c != '1') throw ContractViolation("modality indicator bits must be 0/1, got '" + std::string(bits) + "'");
    v = (v << 1) | static_cast<unsigned>(c == '1');
  }
  return from_value(v);
}

ModalityIndicator ModalityIndicator::from_flags(const std::array<bool, kNumModalities>& flags) {
  unsigned v = 0;
  for (bool f : flags) v = (v << 1) | static_cast<unsigned>(f);
  return from_value(v);
}

int ModalityIndicator::count() const { return std::popcount(value_); }

std::vector<Modality> ModalityIndicator::available_modalities() const {
  std::vector<Modality> out;
  for (Modality m : kModalities) {
    if (available(m)) out.push_back(m);
  }
  return out;
}

std::string ModalityIndicator::to_string() const {
  std::string s(kNumModalities, '0');
  for (Modality m : kModalities) s[index_of(m)] = available(m) ? '1' : '0';
  return s;
}

std::vector<ModalityIndicator> enumerate_scenarios() {
  std::vector<ModalityIndicator> out;
  out.reserve(15);
  for (unsigned v = 1; v <= 15; ++v) out.push_back(ModalityIndicator::from_value(v));
  return out;
}

ModalityIndicator sample_perturbation(Rng& rng) {
  return ModalityIndicator::from_value(1 + static_cast<unsigned>(rng.below(15)));
}

std::string_view name_of(Pairing p) { return kPairingNames[static_cast<std::size_t>(p)]; }

Modality partner(Pairing p, Modality m) { return kPartners[static_cast<std::size_t>(p)][index_of(m)]; }

RelationshipTable::RelationshipTable(std::array<Pairing, 3> order) : order_(order) {
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<Pairing, 3>{Pairing::I, Pairing::II, Pairing::III}) {
    throw ContractViolation("relationship order must be a permutation of I, II, III");
  }
}

RelationshipTable RelationshipTable::parse(std::string_view text) {
  std::array<Pairing, 3> order{};
  std::size_t n = 0;
  std::string token;
  std::istringstream is{std::string(text)};
  while (std::getline(is, token, ',')) {
    token.erase(std::remove_if(token.begin(), token.end(), [](unsigned char c) { return std::isspace(c); }),
                token.end());
    auto it = std::find(kPairingNames.begin(), kPairingNames.end(), token);
    if (it == kPairingNames.end() || n >= 3) {
      throw ContractViolation("bad relationship order '" + std::string(text) + "' (expected e.g. I,II,III)");
    }
    order[n++] = static_cast<Pairing>(it - kPairingNames.begin());
  }
  if (n != 3) throw ContractViolation("bad relationship order '" + std::string(text) + "' (expected e.g. I,II,III)");
  return RelationshipTable(order);
}

std::vector<RelationshipTable> RelationshipTable::all_orders() {
  std::array<Pairing, 3> order{Pairing::I, Pairing::II, Pairing::III};
  std::vector<RelationshipTable> out;
  do {
    out.emplace_back(order);
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

std::array<Modality, 3> RelationshipTable::partners(Modality m) const {
  return {partner(order_[0], m), partner(order_[1], m), partner(order_[2], m)};
}

std::string RelationshipTable::to_string() const {
  return std::string(name_of(order_[0])) + "," + std::string(name_of(order_[1])) + "," +
         std::string(name_of(order_[2]));
}

Modality donor_for(Modality missing, const ModalityIndicator& delta, const RelationshipTable& table) {
  if (delta.available(missing)) {
    throw ContractViolation("donor_for: modality " + std::string(name_of(missing)) + " is available");
  }
  for (Modality p : table.partners(missing)) {
    if (delta.available(p)) return p;
  }
  // Unreachable: the three partners cover the other modalities and delta is non-empty.
  throw ContractViolation("donor_for: no available modality");
}

}  // namespace demoseg
