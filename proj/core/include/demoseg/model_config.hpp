// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "demoseg/modality.hpp"

namespace demoseg {

/// Network shape and component toggles.
struct ModelConfig {
  std::string profile = "desk";
  int num_scales = 3;
  /// Feature channels per scale; scale 0 is the fused map and must equal 4C.
  std::vector<int> channels{32, 64, 128};
  int max_channels = 320;
  /// Channels per sub-space (C). Each modality yields 4C channels.
  int sub_channels = 8;
  int num_classes = 4;
  double leaky_slope = 0.01;
  /// Norm + activation between the two decoupling convolutions.
  bool decoupler_inner_norm = true;

  // Component toggles used by the ablation harness.
  bool feature_decoupling = true;
  bool use_cssa = true;
  bool use_rcr = true;
  /// Y[c] = X[c] + sigmoid(S[Q(c)]) X[Q(c)] instead of the plain residual.
  bool cssa_soft_gate = false;
  RelationshipTable rcr_order;

  /// 3 scales, channels (32, 64, 128), C = 8, K = 4.
  static ModelConfig desk();
  /// 6 scales, channels capped at 320, C = 8, K = 4.
  static ModelConfig full();

  int fused_channels() const { return 4 * sub_channels; }
  /// Channels produced per modality by the decoupler (C1).
  int modality_channels() const { return feature_decoupling ? 4 * sub_channels : sub_channels; }
  /// Required divisor of every spatial input dimension.
  int spatial_divisor() const { return 1 << (num_scales - 1); }

  /// Throws ContractViolation on an inconsistent configuration.
  void validate() const;
};

}  // namespace demoseg
