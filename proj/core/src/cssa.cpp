// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/cssa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "demoseg/layers.hpp"

namespace demoseg {

std::vector<std::vector<std::uint8_t>> PermutationPlan::dense() const {
  const std::size_t n = order.size();
  std::vector<std::vector<std::uint8_t>> p(n, std::vector<std::uint8_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i) p[i][static_cast<std::size_t>(order[i])] = 1;
  return p;
}

bool PermutationPlan::is_permutation() const {
  std::vector<bool> seen(order.size(), false);
  for (auto j : order) {
    if (j < 0 || j >= static_cast<std::int64_t>(order.size()) || seen[static_cast<std::size_t>(j)]) return false;
    seen[static_cast<std::size_t>(j)] = true;
  }
  return true;
}

std::vector<std::int64_t> PermutationPlan::inverse() const {
  std::vector<std::int64_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[static_cast<std::size_t>(order[i])] = static_cast<std::int64_t>(i);
  return inv;
}

PermutationPlan permutation_from_scores(std::span<const double> scores) {
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("channel score is NaN");
  }
  PermutationPlan plan;
  plan.scores.assign(scores.begin(), scores.end());
  plan.order.resize(scores.size());
  std::iota(plan.order.begin(), plan.order.end(), std::int64_t{0});
  std::stable_sort(plan.order.begin(), plan.order.end(),
                   [&](std::int64_t a, std::int64_t b) { return scores[a] > scores[b]; });
  return plan;
}

std::string cssa_prefix(const std::string& owner) { return "enabling.cssa." + owner; }

template <typename T>
void init_cssa(ParameterStore<T>& params, const std::string& prefix, int channels, double slope) {
  const int hidden = std::max(1, channels / 2);
  init_linear(params, prefix + ".fc0", channels, hidden, slope);
  init_linear(params, prefix + ".fc1", hidden, channels, slope);
}

template <typename T>
Var<T> channel_scores(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, double slope) {
  const auto& w0 = params.get(prefix + ".fc0.weight");
  if (x.shape().empty() || x.shape()[0] != w0.shape()[1]) {
    throw ShapeError("channel attention expects " + std::to_string(w0.shape()[1]) + " channels, got " +
                     to_string(x.shape()));
  }
  Var<T> h = linear_layer(ops::global_avg_pool(x), params, prefix + ".fc0");
  h = ops::leaky_relu(h, slope);
  return linear_layer(h, params, prefix + ".fc1");
}

template <typename T>
Var<T> apply_permutation_residual(const Var<T>& x, const PermutationPlan& plan) {
  return ops::add(x, ops::channel_gather(x, plan.order));
}

template <typename T>
CssaResult<T> cssa_forward(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, double slope,
                           bool soft_gate) {
  CssaResult<T> r;
  r.scores = channel_scores(x, params, prefix, slope);
  std::vector<double> s(r.scores.value().values().begin(), r.scores.value().values().end());
  r.plan = permutation_from_scores(s);
  if (!soft_gate) {
    r.output = apply_permutation_residual(x, r.plan);
  } else {
    const Var<T> gate = ops::sigmoid(ops::channel_gather(r.scores, r.plan.order));
    r.output = ops::add(x, ops::channel_scale(ops::channel_gather(x, r.plan.order), gate));
  }
  return r;
}

#define DEMOSEG_INSTANTIATE_CSSA(T)                                                                          \
  template void init_cssa<T>(ParameterStore<T>&, const std::string&, int, double);                          \
  template Var<T> channel_scores<T>(const Var<T>&, const ParameterStore<T>&, const std::string&, double);   \
  template Var<T> apply_permutation_residual<T>(const Var<T>&, const PermutationPlan&);                     \
  template CssaResult<T> cssa_forward<T>(const Var<T>&, const ParameterStore<T>&, const std::string&, double, bool);

DEMOSEG_INSTANTIATE_CSSA(float)
DEMOSEG_INSTANTIATE_CSSA(double)

}  // namespace demoseg
