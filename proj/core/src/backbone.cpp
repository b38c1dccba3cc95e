// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/backbone.hpp"

#include "demoseg/layers.hpp"

namespace demoseg {

namespace {

std::string enc(int s) { return "encoder.s" + std::to_string(s); }
std::string dec(int s) { return "decoder.s" + std::to_string(s); }
std::string head(int s) { return "head.s" + std::to_string(s); }
const std::string kRcrConv = "enabling.rcr_conv";

}  // namespace

std::string scope_prefix(ParamScope scope) {
  switch (scope) {
    case ParamScope::decoupler: return "enabling.decoupler.";
    case ParamScope::cssa: return "enabling.cssa.";
    case ParamScope::rcr: return "enabling.rcr";
    case ParamScope::enabling: return "enabling.";
    case ParamScope::backbone:
    case ParamScope::whole: return "";
  }
  return "";
}

template <typename T>
void init_network(ParameterStore<T>& params, const ModelConfig& cfg) {
  cfg.validate();
  const double a = cfg.leaky_slope;
  for (Modality m : kModalities) init_decoupler(params, m, cfg);
  if (cfg.use_cssa) {
    for (Modality m : kModalities) init_cssa(params, cssa_prefix(std::string(name_of(m))), cfg.modality_channels(), a);
  }
  if (!cfg.use_rcr) {
    // A learned 1x1x1 convolution over all (zero-filled) modality blocks.
    init_conv(params, kRcrConv, 4 * cfg.modality_channels(), cfg.fused_channels(), 1, a, false);
  }
  for (int s = 1; s < cfg.num_scales; ++s) {
    init_conv(params, enc(s) + ".conv0", cfg.channels[s - 1], cfg.channels[s], 3, a, true);
    init_conv(params, enc(s) + ".conv1", cfg.channels[s], cfg.channels[s], 3, a, true);
  }
  for (int s = cfg.num_scales - 2; s >= 0; --s) {
    const int below = cfg.channels[s + 1], here = cfg.channels[s];
    params.kaiming(dec(s) + ".up.weight", {below, here, 2, 2, 2}, static_cast<std::int64_t>(below) * 8, a);
    params.constant(dec(s) + ".up.bias", {here}, T{0});
    init_conv(params, dec(s) + ".conv0", 2 * here, here, 3, a, true);
    init_conv(params, dec(s) + ".conv1", here, here, 3, a, true);
  }
  for (int s = 0; s < cfg.num_scales; ++s) init_conv(params, head(s), cfg.channels[s], cfg.num_classes, 1, 1.0, false);
}

template <typename T>
SegmentationNet<T>::SegmentationNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(seed) {
  init_network(params_, cfg_);
}

template <typename T>
SegmentationNet<T>::SegmentationNet(ModelConfig cfg, ParameterStore<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  ParameterStore<T> expected(params_.seed());
  init_network(expected, cfg_);
  if (expected.size() != params_.size()) throw ContractViolation("parameter set does not match model config");
  for (const auto& [name, v] : expected.entries()) {
    if (!params_.contains(name) || params_.get(name).shape() != v.shape()) {
      throw ContractViolation("parameter '" + name + "' missing or mis-shaped for model config");
    }
  }
}

template <typename T>
ForwardOutput<T> SegmentationNet<T>::forward(const ModalityImages<T>& images, const ModalityIndicator& delta) const {
  const double a = cfg_.leaky_slope;
  const int div = cfg_.spatial_divisor();
  ForwardOutput<T> out;

  std::array<const DecoupledFeatures<T>*, kNumModalities> present{};
  Extent3 extent{};
  for (Modality m : delta.available_modalities()) {
    const auto& img = images[index_of(m)];
    const Extent3 e = spatial_extent(img.shape());
    if (e.d % div || e.h % div || e.w % div) {
      throw ShapeError("spatial dims " + to_string(img.shape()) + " must be divisible by " + std::to_string(div));
    }
    if (extent.voxels() != 0 && !(e == extent)) throw ShapeError("modality images differ in shape");
    extent = e;

    DecoupledFeatures<T> f = decouple(Var<T>::constant(img), m, params_, cfg_);
    if (cfg_.use_cssa) {
      auto r = cssa_forward(f.raw_pre, params_, cssa_prefix(std::string(name_of(m))), a, cfg_.cssa_soft_gate);
      f.raw_post = r.output;
      out.plans[index_of(m)] = std::move(r.plan);
    } else {
      f.raw_post = f.raw_pre;
    }
    split_subspaces(f.raw_post, m, cfg_.sub_channels, cfg_.feature_decoupling, f.self_post, f.mutual_post);
    out.features[index_of(m)] = std::move(f);
    present[index_of(m)] = &*out.features[index_of(m)];
  }

  if (cfg_.use_rcr) {
    auto fused = compensate(present, delta, cfg_.rcr_order);
    out.fused = fused.tensor;
    out.provenance = fused.provenance;
  } else {
    std::vector<Var<T>> blocks;
    for (Modality m : kModalities) {
      if (present[index_of(m)]) {
        blocks.push_back(present[index_of(m)]->raw_post);
      } else {
        blocks.push_back(Var<T>::constant(Tensor<T>({cfg_.modality_channels(), extent.d, extent.h, extent.w})));
      }
    }
    out.fused = conv_block(ops::concat(blocks, 0), params_, kRcrConv, 1, a, false);
  }

  std::vector<Var<T>> skips{out.fused};
  for (int s = 1; s < cfg_.num_scales; ++s) {
    Var<T> h = conv_block(skips.back(), params_, enc(s) + ".conv0", 2, a, true);
    skips.push_back(conv_block(h, params_, enc(s) + ".conv1", 1, a, true));
  }

  out.logits.resize(static_cast<std::size_t>(cfg_.num_scales));
  Var<T> h = skips.back();
  out.logits.back() = conv_block(h, params_, head(cfg_.num_scales - 1), 1, a, false);
  for (int s = cfg_.num_scales - 2; s >= 0; --s) {
    Var<T> up = ops::conv_transpose3d(h, params_.get(dec(s) + ".up.weight"), params_.get(dec(s) + ".up.bias"));
    h = ops::concat<T>({up, skips[static_cast<std::size_t>(s)]}, 0);
    h = conv_block(h, params_, dec(s) + ".conv0", 1, a, true);
    h = conv_block(h, params_, dec(s) + ".conv1", 1, a, true);
    out.logits[static_cast<std::size_t>(s)] = conv_block(h, params_, head(s), 1, a, false);
  }
  return out;
}

template <typename T>
std::int64_t SegmentationNet<T>::count_params(ParamScope scope) const {
  if (scope == ParamScope::backbone) return params_.count() - params_.count(scope_prefix(ParamScope::enabling));
  return params_.count(scope_prefix(scope));
}

double count_flops(const ModelConfig& cfg, ParamScope scope, const Extent3& patch) {
  cfg.validate();
  auto conv = [](double k3, double cin, double cout, double vox) { return 2.0 * k3 * cin * cout * vox; };
  const double v0 = static_cast<double>(patch.voxels());
  const double c1 = cfg.modality_channels();

  double decoupler = 0.0, cssa = 0.0, rcr = 0.0, backbone = 0.0;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    decoupler += conv(27, 1, c1, v0) + conv(27, c1, c1, v0);
    if (cfg.use_cssa) {
      const double hidden = std::max(1.0, std::floor(c1 / 2));
      cssa += 2.0 * c1 * hidden + 2.0 * hidden * c1;
    }
  }
  if (!cfg.use_rcr) rcr = conv(1, 4 * c1, cfg.fused_channels(), v0);

  auto vox = [&](int s) { return v0 / std::pow(8.0, s); };
  for (int s = 1; s < cfg.num_scales; ++s) {
    backbone += conv(27, cfg.channels[s - 1], cfg.channels[s], vox(s)) + conv(27, cfg.channels[s], cfg.channels[s], vox(s));
  }
  for (int s = cfg.num_scales - 2; s >= 0; --s) {
    backbone += 2.0 * 8 * cfg.channels[s + 1] * cfg.channels[s] * vox(s + 1);
    backbone += conv(27, 2 * cfg.channels[s], cfg.channels[s], vox(s)) + conv(27, cfg.channels[s], cfg.channels[s], vox(s));
  }
  for (int s = 0; s < cfg.num_scales; ++s) backbone += conv(1, cfg.channels[s], cfg.num_classes, vox(s));

  switch (scope) {
    case ParamScope::decoupler: return decoupler;
    case ParamScope::cssa: return cssa;
    case ParamScope::rcr: return rcr;
    case ParamScope::enabling: return decoupler + cssa + rcr;
    case ParamScope::backbone: return backbone;
    case ParamScope::whole: return decoupler + cssa + rcr + backbone;
  }
  return 0.0;
}

template class SegmentationNet<float>;
template class SegmentationNet<double>;
template void init_network<float>(ParameterStore<float>&, const ModelConfig&);
template void init_network<double>(ParameterStore<double>&, const ModelConfig&);

}  // namespace demoseg
