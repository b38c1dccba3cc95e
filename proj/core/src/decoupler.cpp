// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/decoupler.hpp"

#include <algorithm>

#include "demoseg/layers.hpp"

namespace demoseg {

template <typename T>
void init_conv(ParameterStore<T>& params, const std::string& prefix, int cin, int cout, int k, double slope,
               bool norm) {
  params.kaiming(prefix + ".weight", {cout, cin, k, k, k}, static_cast<std::int64_t>(cin) * k * k * k, slope);
  params.constant(prefix + ".bias", {cout}, T{0});
  if (norm) {
    params.constant(prefix + ".norm.gamma", {cout}, T{1});
    params.constant(prefix + ".norm.beta", {cout}, T{0});
  }
}

template <typename T>
Var<T> conv_block(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix, int stride,
                  double slope, bool norm_act) {
  Var<T> y = ops::conv3d(x, params.get(prefix + ".weight"), params.get(prefix + ".bias"), stride);
  if (!norm_act) return y;
  y = ops::instance_norm(y, params.get(prefix + ".norm.gamma"), params.get(prefix + ".norm.beta"));
  return ops::leaky_relu(y, slope);
}

template <typename T>
void init_linear(ParameterStore<T>& params, const std::string& prefix, int in, int out, double slope) {
  params.kaiming(prefix + ".weight", {out, in}, in, slope);
  params.constant(prefix + ".bias", {out}, T{0});
}

template <typename T>
Var<T> linear_layer(const Var<T>& x, const ParameterStore<T>& params, const std::string& prefix) {
  return ops::linear(x, params.get(prefix + ".weight"), params.get(prefix + ".bias"));
}

ChannelRange self_range(int sub_channels) { return {0, sub_channels}; }

ChannelRange mutual_range(int sub_channels, Modality source, Modality target) {
  if (source == target) throw ContractViolation("a modality has no Mutual-feature for itself");
  const auto rest = others(source);
  const int j = static_cast<int>(std::find(rest.begin(), rest.end(), target) - rest.begin());
  return {(j + 1) * sub_channels, (j + 2) * sub_channels};
}

std::string decoupler_prefix(Modality m) { return "enabling.decoupler." + std::string(name_of(m)); }

template <typename T>
void init_decoupler(ParameterStore<T>& params, Modality m, const ModelConfig& cfg) {
  const std::string p = decoupler_prefix(m);
  const int out = cfg.modality_channels();
  init_conv(params, p + ".conv0", 1, out, 3, cfg.leaky_slope, cfg.decoupler_inner_norm);
  init_conv(params, p + ".conv1", out, out, 3, cfg.leaky_slope, true);
}

template <typename T>
void split_subspaces(const Var<T>& x, Modality m, int sub_channels, bool decoupled, Var<T>& self_out,
                     std::array<Var<T>, kNumModalities>& mutual_out) {
  const std::int64_t expected = decoupled ? 4 * sub_channels : sub_channels;
  if (x.shape().empty() || x.shape()[0] != expected) {
    throw ShapeError("decoupled feature for " + std::string(name_of(m)) + " must have " + std::to_string(expected) +
                     " channels, got " + to_string(x.shape()));
  }
  mutual_out = {};
  if (!decoupled) {
    self_out = x;
    for (Modality l : others(m)) mutual_out[index_of(l)] = x;
    return;
  }
  const auto s = self_range(sub_channels);
  self_out = ops::slice(x, 0, s.begin, s.end);
  for (Modality l : others(m)) {
    const auto r = mutual_range(sub_channels, m, l);
    mutual_out[index_of(l)] = ops::slice(x, 0, r.begin, r.end);
  }
}

template <typename T>
DecoupledFeatures<T> decouple(const Var<T>& image, Modality m, const ParameterStore<T>& params,
                              const ModelConfig& cfg) {
  if (image.shape().size() != 4 || image.shape()[0] != 1) {
    throw ShapeError("decouple expects a single-channel [1,D,H,W] image, got " + to_string(image.shape()));
  }
  const std::string p = decoupler_prefix(m);
  Var<T> h = conv_block(image, params, p + ".conv0", 1, cfg.leaky_slope, cfg.decoupler_inner_norm);
  h = conv_block(h, params, p + ".conv1", 1, cfg.leaky_slope, true);

  DecoupledFeatures<T> f;
  f.modality = m;
  f.sub_channels = cfg.sub_channels;
  f.raw_pre = h;
  split_subspaces(h, m, cfg.sub_channels, cfg.feature_decoupling, f.self_pre, f.mutual_pre);
  return f;
}

#define DEMOSEG_INSTANTIATE_DECOUPLER(T)                                                                      \
  template void init_conv<T>(ParameterStore<T>&, const std::string&, int, int, int, double, bool);            \
  template Var<T> conv_block<T>(const Var<T>&, const ParameterStore<T>&, const std::string&, int, double, bool); \
  template void init_linear<T>(ParameterStore<T>&, const std::string&, int, int, double);                     \
  template Var<T> linear_layer<T>(const Var<T>&, const ParameterStore<T>&, const std::string&);               \
  template void init_decoupler<T>(ParameterStore<T>&, Modality, const ModelConfig&);                          \
  template DecoupledFeatures<T> decouple<T>(const Var<T>&, Modality, const ParameterStore<T>&, const ModelConfig&); \
  template void split_subspaces<T>(const Var<T>&, Modality, int, bool, Var<T>&, std::array<Var<T>, kNumModalities>&);

DEMOSEG_INSTANTIATE_DECOUPLER(float)
DEMOSEG_INSTANTIATE_DECOUPLER(double)

}  // namespace demoseg
