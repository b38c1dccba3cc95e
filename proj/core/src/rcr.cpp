// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/rcr.hpp"

namespace demoseg {

std::string SlotSource::to_string() const {
  if (is_self) return "s_" + std::string(name_of(slot));
  return "u_{" + std::string(name_of(source)) + "->" + std::string(name_of(slot)) + "}";
}

Provenance route(const ModalityIndicator& delta, const RelationshipTable& table) {
  Provenance p{};
  for (Modality m : kModalities) {
    if (delta.available(m)) {
      p[index_of(m)] = {m, m, true};
    } else {
      p[index_of(m)] = {m, donor_for(m, delta, table), false};
    }
  }
  return p;
}

template <typename T>
FusedFeature<T> compensate(const std::array<const DecoupledFeatures<T>*, kNumModalities>& features,
                           const ModalityIndicator& delta, const RelationshipTable& table) {
  for (Modality m : kModalities) {
    const bool has = features[index_of(m)] != nullptr;
    if (has && !delta.available(m)) {
      throw ContractViolation("features supplied for unavailable modality " + std::string(name_of(m)));
    }
    if (!has && delta.available(m)) {
      throw ContractViolation("no features for available modality " + std::string(name_of(m)));
    }
  }

  FusedFeature<T> out;
  out.provenance = route(delta, table);
  std::vector<Var<T>> slots;
  slots.reserve(kNumModalities);
  for (const SlotSource& s : out.provenance) {
    const auto& f = *features[index_of(s.source)];
    slots.push_back(s.is_self ? f.self_post : f.mutual_post[index_of(s.slot)]);
  }
  const Shape& ref = slots.front().shape();
  for (const auto& v : slots) {
    if (v.shape() != ref) {
      throw ShapeError("sub-space shape mismatch: " + to_string(v.shape()) + " vs " + to_string(ref));
    }
  }
  out.tensor = ops::concat(slots, 0);
  return out;
}

template FusedFeature<float> compensate<float>(const std::array<const DecoupledFeatures<float>*, kNumModalities>&,
                                               const ModalityIndicator&, const RelationshipTable&);
template FusedFeature<double> compensate<double>(const std::array<const DecoupledFeatures<double>*, kNumModalities>&,
                                                 const ModalityIndicator&, const RelationshipTable&);

}  // namespace demoseg
