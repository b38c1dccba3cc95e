// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segmentation and sub-space alignment objectives.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "demoseg/backbone.hpp"
#include "demoseg/config.hpp"
#include "demoseg/decoupler.hpp"
#include "demoseg/diffops.hpp"
#include "demoseg/volume_io.hpp"

namespace demoseg {

struct LossBreakdown {
  std::vector<double> seg_per_scale;  ///< unweighted L_seg of each supervised scale
  std::vector<double> weights;        ///< deep-supervision weights, same length
  double seg = 0.0;                   ///< sum_s w_s L_seg,s
  double kd = 0.0;                    ///< kd_weight * L_kd
  double total = 0.0;
  double temperature = 1.0;
  int kd_pairs = 0;
};

template <typename T>
struct LossResult {
  Var<T> total;
  LossBreakdown breakdown;
};

/// Mean over voxels of KL(softmax(student/t) || softmax(teacher/t)), softmax
/// over the channel axis. Shapes [C, ...] must match. With `detach_teacher`
/// no gradient reaches `teacher`.
template <typename T>
Var<T> channel_kl(const Var<T>& student, const Var<T>& teacher, double t, bool detach_teacher = true);

/// Sum over ordered pairs (m, n), m != n, both present in `features`, of
/// channel_kl(u_{n->m}, s_m). `post` selects the post-attention sub-spaces.
/// Returns a zero constant when fewer than two modalities are present.
template <typename T>
Var<T> kd_loss(const std::array<std::optional<DecoupledFeatures<T>>, kNumModalities>& features, double t,
               bool post = false, bool detach_teacher = true, int* pairs = nullptr);

/// (1/K) sum_k [1 - (2 sum g p + eps) / (sum g + sum p + eps)] - (1/N) sum g log p
/// with p = softmax(logits) over axis 0. `target` is a [K, ...] (one-hot) map.
template <typename T>
Var<T> dice_ce_loss(const Var<T>& logits, const Tensor<T>& target, double eps = 1e-5);

/// Same with integer labels; throws DataError on an id >= K.
template <typename T>
Var<T> dice_ce_loss(const Var<T>& logits, const std::vector<std::uint8_t>& labels, double eps = 1e-5);

template <typename T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, const Extent3& extent, int num_classes);

/// w_s proportional to 2^-s, s = 0 .. n-1, summing to 1.
std::vector<double> deep_supervision_weights(int num_scales);

/// Halves every axis; each output voxel takes the most frequent label of its
/// 2x2x2 block, ties resolved to the lower id. Extents must be even.
LabelVolume downsample_labels_majority(const LabelVolume& labels);

/// Labels for every decoder scale, scale 0 first.
std::vector<LabelVolume> label_pyramid(const LabelVolume& labels, int num_scales);

/// sum_s w_s L_seg,s + kd_weight * L_kd for one sample.
template <typename T>
LossResult<T> total_loss(const ForwardOutput<T>& out, const std::vector<LabelVolume>& pyramid, const LossConfig& cfg);

}  // namespace demoseg
