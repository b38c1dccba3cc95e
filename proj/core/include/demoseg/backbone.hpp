// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// 3D U-Net whose first encoder stage is replaced by the enabling module
// (decouple -> channel attention -> compensation). Encoder stages downsample
// with stride-2 convolutions; decoder stages upsample with kernel-2
// transposed convolutions and concatenate the skip of the same scale. Every
// scale, the bottleneck included, has a 1x1x1 segmentation head.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "demoseg/cssa.hpp"
#include "demoseg/decoupler.hpp"
#include "demoseg/model_config.hpp"
#include "demoseg/params.hpp"
#include "demoseg/rcr.hpp"

namespace demoseg {

/// One [1, D, H, W] image per modality in canonical order. Entries for
/// unavailable modalities are ignored and may be empty.
template <typename T>
using ModalityImages = std::array<Tensor<T>, kNumModalities>;

template <typename T>
struct ForwardOutput {
  /// Scale s has spatial dims input / 2^s and K channels.
  std::vector<Var<T>> logits;
  std::array<std::optional<DecoupledFeatures<T>>, kNumModalities> features;
  std::array<std::optional<PermutationPlan>, kNumModalities> plans;
  /// Slot routing; meaningful only when compensation routing is enabled.
  Provenance provenance{};
  Var<T> fused;
};

enum class ParamScope { decoupler, cssa, rcr, enabling, backbone, whole };

/// Parameter-name prefix for a scope (backbone is whole minus enabling).
std::string scope_prefix(ParamScope scope);

template <typename T>
class SegmentationNet {
 public:
  SegmentationNet(ModelConfig cfg, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match `cfg`.
  SegmentationNet(ModelConfig cfg, ParameterStore<T> params);

  /// Only the modalities marked available in `delta` are encoded.
  ForwardOutput<T> forward(const ModalityImages<T>& images, const ModalityIndicator& delta) const;

  const ModelConfig& config() const { return cfg_; }
  /// Routing order is not a learned quantity and may change after training.
  void set_rcr_order(const RelationshipTable& table) { cfg_.rcr_order = table; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  std::int64_t count_params(ParamScope scope) const;

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
};

/// Registers every parameter `cfg` needs, in a fixed order.
template <typename T>
void init_network(ParameterStore<T>& params, const ModelConfig& cfg);

/// Floating point operations of one full-modality forward pass over `patch`,
/// counted as 2 x multiply-adds of convolutions, transposed convolutions and
/// linear maps. Normalisation and activations are not counted.
double count_flops(const ModelConfig& cfg, ParamScope scope, const Extent3& patch);

}  // namespace demoseg
