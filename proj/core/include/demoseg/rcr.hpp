// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Builds the pseudo full-modality feature [t1 | tc | t2 | fl] (C channels per
// slot). An available modality fills its own slot with its Self-feature; a
// missing one borrows the Mutual-feature its donor learned for it.

#pragma once

#include <array>
#include <string>

#include "demoseg/decoupler.hpp"
#include "demoseg/modality.hpp"

namespace demoseg {

struct SlotSource {
  Modality slot{};
  Modality source{};
  bool is_self = true;

  std::string to_string() const;  ///< "s_t1" or "u_{t2->t1}"
  friend bool operator==(const SlotSource&, const SlotSource&) = default;
};

using Provenance = std::array<SlotSource, kNumModalities>;

/// Slot-by-slot routing decision; pure selection, no parameters.
Provenance route(const ModalityIndicator& delta, const RelationshipTable& table);

template <typename T>
struct FusedFeature {
  Var<T> tensor;  ///< [4C, D, H, W]
  Provenance provenance;
};

/// `features[m]` must be set exactly for the available modalities and hold
/// post-attention sub-spaces. Throws ContractViolation or ShapeError.
template <typename T>
FusedFeature<T> compensate(const std::array<const DecoupledFeatures<T>*, kNumModalities>& features,
                           const ModalityIndicator& delta, const RelationshipTable& table);

}  // namespace demoseg
