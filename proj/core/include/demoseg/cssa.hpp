// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Channel-wise sparse self-attention.
//
// Each channel of X (C1 channels) gets a score S = MLP(GAP(X)). Sorting the
// scores in descending order gives Q, where Q(i) is the channel holding the
// i-th highest score. The attention matrix P has rows e_{Q(i)}^T, so it is a
// permutation matrix and (P X)[i] = X[Q(i)]. The layer output is X + P X.
//
// P is applied as an index gather. The sort is piecewise constant, so the
// backward pass treats Q as fixed; with the plain residual the score MLP
// gets no gradient. The optional soft gate scales the gathered channel by
// sigmoid(S[Q(c)]), which gives the MLP a gradient path.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "demoseg/diffops.hpp"
#include "demoseg/params.hpp"

namespace demoseg {

struct PermutationPlan {
  std::vector<double> scores;
  /// order[i] = channel with the i-th highest score (ties: lower index first).
  std::vector<std::int64_t> order;

  std::size_t channels() const { return order.size(); }
  /// Dense C1 x C1 0/1 matrix with row i = e_{order[i]}^T.
  std::vector<std::vector<std::uint8_t>> dense() const;
  /// True when order is a permutation of [0, C1).
  bool is_permutation() const;
  /// Inverse mapping: inverse()[order[i]] == i.
  std::vector<std::int64_t> inverse() const;
};

/// Stable descending sort. Throws NumericError on NaN scores.
PermutationPlan permutation_from_scores(std::span<const double> scores);

std::string cssa_prefix(const std::string& owner);

/// Two linear maps C1 -> C1/2 -> C1 with a leaky rectifier between them.
template <typename T>
void init_cssa(ParameterStore<T>& params, const std::string& prefix, int channels, double slope);

/// S = MLP(GAP(X)), shape [C1].
template <typename T>
Var<T> channel_scores(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, double slope);

template <typename T>
struct CssaResult {
  Var<T> output;
  Var<T> scores;
  PermutationPlan plan;
};

template <typename T>
CssaResult<T> cssa_forward(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, double slope,
                           bool soft_gate);

/// X + P X with P given; the attention step on its own.
template <typename T>
Var<T> apply_permutation_residual(const Var<T>& x, const PermutationPlan& plan);

}  // namespace demoseg
