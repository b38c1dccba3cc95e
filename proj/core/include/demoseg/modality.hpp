// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// The four MRI contrasts, the availability indicator and the fixed
// cross-modality priority pairings used to fill in missing modalities.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "demoseg/rng.hpp"

namespace demoseg {

enum class Modality : std::uint8_t { t1 = 0, tc = 1, t2 = 2, fl = 3 };

inline constexpr std::size_t kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kModalities{Modality::t1, Modality::tc, Modality::t2,
                                                                  Modality::fl};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
std::string_view name_of(Modality m);
/// Throws ContractViolation on an unknown name.
Modality modality_from_name(std::string_view name);

/// The other three modalities in canonical order.
std::array<Modality, 3> others(Modality m);

/// Availability vector [t1, tc, t2, fl]; never all-false.
class ModalityIndicator {
 public:
  /// Bit string read in [t1, tc, t2, fl] order, so "1000" is t1 only and
  /// value() == 8. Throws ContractViolation for the empty set.
  static ModalityIndicator from_value(unsigned value);
  static ModalityIndicator from_string(std::string_view bits);
  static ModalityIndicator from_flags(const std::array<bool, kNumModalities>& flags);
  static ModalityIndicator full() { return from_value(15); }

  bool available(Modality m) const { return (value_ >> (3 - index_of(m))) & 1U; }
  bool operator[](Modality m) const { return available(m); }
  unsigned value() const { return value_; }
  int count() const;
  bool is_full() const { return value_ == 15; }
  std::vector<Modality> available_modalities() const;
  std::string to_string() const;

  friend bool operator==(const ModalityIndicator&, const ModalityIndicator&) = default;
  friend auto operator<=>(const ModalityIndicator&, const ModalityIndicator&) = default;

 private:
  explicit ModalityIndicator(unsigned v) : value_(v) {}
  unsigned value_;
};

/// All 15 non-empty indicators in ascending value().
std::vector<ModalityIndicator> enumerate_scenarios();

/// Uniform draw over the 15 non-empty indicators.
ModalityIndicator sample_perturbation(Rng& rng);

/// The three perfect matchings on {t1, tc, t2, fl}:
///   I   = {t1<->tc, t2<->fl}
///   II  = {t1<->t2, tc<->fl}
///   III = {t1<->fl, tc<->t2}
enum class Pairing : std::uint8_t { I = 0, II = 1, III = 2 };

std::string_view name_of(Pairing p);
Modality partner(Pairing p, Modality m);

/// Priority order over the three pairings, highest first.
class RelationshipTable {
 public:
  RelationshipTable() = default;  // I, II, III
  explicit RelationshipTable(std::array<Pairing, 3> order);
  /// Parses "I,II,III" style permutations.
  static RelationshipTable parse(std::string_view text);
  /// All six priority orders, lexicographic in Pairing value.
  static std::vector<RelationshipTable> all_orders();

  const std::array<Pairing, 3>& order() const { return order_; }
  /// Partners of m in priority order.
  std::array<Modality, 3> partners(Modality m) const;
  std::string to_string() const;

  friend bool operator==(const RelationshipTable&, const RelationshipTable&) = default;

 private:
  std::array<Pairing, 3> order_{Pairing::I, Pairing::II, Pairing::III};
};

/// First available partner of `missing`, scanning pairings in priority order.
/// Throws ContractViolation if `missing` is itself available.
Modality donor_for(Modality missing, const ModalityIndicator& delta, const RelationshipTable& table);

}  // namespace demoseg
