// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-modality feature partition: two 3x3x3 convolutions map one image onto
// 4C channels, read as one Self-feature and three Mutual-features.

#pragma once

#include <array>
#include <optional>
#include <string>

#include "demoseg/diffops.hpp"
#include "demoseg/modality.hpp"
#include "demoseg/model_config.hpp"
#include "demoseg/params.hpp"

namespace demoseg {

/// Channel range [begin, end) of one sub-space inside a modality's 4C block.
struct ChannelRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

/// Self range is [0, C); the Mutual range for `target` is slot j + 1 where j
/// is the position of `target` among the other modalities in canonical order.
ChannelRange self_range(int sub_channels);
ChannelRange mutual_range(int sub_channels, Modality source, Modality target);

template <typename T>
struct DecoupledFeatures {
  Modality modality{};
  int sub_channels = 0;
  /// Raw decoupler output X_m (4C channels, or C when decoupling is off).
  Var<T> raw_pre;
  /// After channel attention; equal to raw_pre when attention is disabled.
  Var<T> raw_post;
  Var<T> self_pre;
  Var<T> self_post;
  /// Indexed by target modality; the entry for `modality` itself stays empty.
  std::array<Var<T>, kNumModalities> mutual_pre;
  std::array<Var<T>, kNumModalities> mutual_post;

  const Var<T>& mutual(Modality target, bool post) const {
    return post ? mutual_post[index_of(target)] : mutual_pre[index_of(target)];
  }
  const Var<T>& self(bool post) const { return post ? self_post : self_pre; }
};

std::string decoupler_prefix(Modality m);

template <typename T>
void init_decoupler(ParameterStore<T>& params, Modality m, const ModelConfig& cfg);

/// image: [1, D, H, W]. Fills the pre-attention fields.
template <typename T>
DecoupledFeatures<T> decouple(const Var<T>& image, Modality m, const ParameterStore<T>& params,
                              const ModelConfig& cfg);

/// Splits X into the four sub-spaces by channel range. With decoupling off
/// (X has C channels) every sub-space is X itself.
template <typename T>
void split_subspaces(const Var<T>& x, Modality m, int sub_channels, bool decoupled, Var<T>& self_out,
                     std::array<Var<T>, kNumModalities>& mutual_out);

}  // namespace demoseg
