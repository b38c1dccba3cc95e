// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "demoseg/error.hpp"
#include "demoseg/params.hpp"

namespace demoseg {

using nlohmann::json;

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.profile = "full";
  c.num_scales = 6;
  c.channels = {32, 64, 128, 256, 320, 320};
  return c;
}

void ModelConfig::validate() const {
  if (num_scales < 2) throw ContractViolation("model needs at least 2 scales");
  if (static_cast<int>(channels.size()) != num_scales)
    throw ContractViolation("channels list has " + std::to_string(channels.size()) + " entries for " +
                            std::to_string(num_scales) + " scales");
  if (sub_channels < 1) throw ContractViolation("sub_channels must be >= 1");
  if (channels[0] != fused_channels())
    throw ContractViolation("scale-0 channels (" + std::to_string(channels[0]) + ") must equal 4C = " +
                            std::to_string(fused_channels()));
  for (int c : channels) {
    if (c < 1 || c > max_channels) throw ContractViolation("channel count out of range: " + std::to_string(c));
  }
  if (num_classes < 2) throw ContractViolation("num_classes must be >= 2");
  if (leaky_slope < 0) throw ContractViolation("leaky_slope must be >= 0");
  if (use_cssa && modality_channels() < 2) throw ContractViolation("channel attention needs >= 2 channels");
}

std::string to_string(KdPlacement p) {
  switch (p) {
    case KdPlacement::none: return "none";
    case KdPlacement::before_cssa: return "before_cssa";
    case KdPlacement::after_cssa: return "after_cssa";
  }
  return "?";
}

KdPlacement kd_placement_from_string(const std::string& s) {
  if (s == "none") return KdPlacement::none;
  if (s == "before_cssa" || s == "before-cssa") return KdPlacement::before_cssa;
  if (s == "after_cssa" || s == "after-cssa") return KdPlacement::after_cssa;
  throw ContractViolation("unknown kd placement '" + s + "'");
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (epochs < 1) throw ContractViolation("epochs must be >= 1");
  if (iters_per_epoch < 1) throw ContractViolation("iters_per_epoch must be >= 1");
  if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
  if (!(lr > 0)) throw ContractViolation("learning rate must be > 0");
  if (!(poly_exponent >= 0)) throw ContractViolation("poly exponent must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ContractViolation("momentum must lie in [0, 1)");
  if (!(foreground_prob >= 0 && foreground_prob <= 1)) throw ContractViolation("foreground_prob must lie in [0, 1]");
  const int div = model.spatial_divisor();
  for (auto v : {patch.d, patch.h, patch.w}) {
    if (v <= 0 || v % div != 0)
      throw ContractViolation("patch " + std::to_string(patch.d) + "x" + std::to_string(patch.h) + "x" +
                              std::to_string(patch.w) + " must be divisible by " + std::to_string(div));
  }
}

double EvalConfig::et_threshold_for(std::int64_t case_voxels) const {
  if (et_threshold >= 0) return et_threshold;
  return et_threshold_full * static_cast<double>(case_voxels) / full_volume;
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model);
  if (!(loss.temperature > 0)) throw ContractViolation("temperature must be > 0");
  if (!(loss.dice_eps >= 0)) throw ContractViolation("dice_eps must be >= 0");
  if (!(eval.overlap >= 0 && eval.overlap < 1)) throw ContractViolation("overlap must lie in [0, 1)");
}

std::uint64_t RunConfig::hash() const {
  json j = *this;
  return stable_hash(j.dump());
}

// --------------------------------------------------------------------- json

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ContractViolation("config section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ContractViolation("unknown config key '" + section + "." + k + "'");
  }
}

template <typename V>
void opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

json extent_json(const Extent3& e) { return json::array({e.d, e.h, e.w}); }

void opt_extent(const json& j, const char* key, Extent3& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (a.is_number_integer()) {
    const auto v = a.get<std::int64_t>();
    out = {v, v, v};
    return;
  }
  if (!a.is_array() || a.size() != 3) throw ContractViolation(std::string("'") + key + "' must be [D, H, W]");
  out = {a[0].get<std::int64_t>(), a[1].get<std::int64_t>(), a[2].get<std::int64_t>()};
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = {{"profile", c.profile},
       {"num_scales", c.num_scales},
       {"channels", c.channels},
       {"max_channels", c.max_channels},
       {"sub_channels", c.sub_channels},
       {"num_classes", c.num_classes},
       {"leaky_slope", c.leaky_slope},
       {"decoupler_inner_norm", c.decoupler_inner_norm},
       {"feature_decoupling", c.feature_decoupling},
       {"use_cssa", c.use_cssa},
       {"use_rcr", c.use_rcr},
       {"cssa_soft_gate", c.cssa_soft_gate},
       {"rcr_order", c.rcr_order.to_string()}};
}

void from_json(const json& j, ModelConfig& c) {
  check_keys(j,
             {"profile", "num_scales", "channels", "max_channels", "sub_channels", "num_classes", "leaky_slope",
              "decoupler_inner_norm", "feature_decoupling", "use_cssa", "use_rcr", "cssa_soft_gate", "rcr_order"},
             "model");
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "full") c = ModelConfig::full();
    else if (p == "desk") c = ModelConfig::desk();
    else throw ContractViolation("unknown profile '" + p + "'");
  }
  opt(j, "num_scales", c.num_scales);
  opt(j, "channels", c.channels);
  opt(j, "max_channels", c.max_channels);
  opt(j, "sub_channels", c.sub_channels);
  opt(j, "num_classes", c.num_classes);
  opt(j, "leaky_slope", c.leaky_slope);
  opt(j, "decoupler_inner_norm", c.decoupler_inner_norm);
  opt(j, "feature_decoupling", c.feature_decoupling);
  opt(j, "use_cssa", c.use_cssa);
  opt(j, "use_rcr", c.use_rcr);
  opt(j, "cssa_soft_gate", c.cssa_soft_gate);
  if (j.contains("rcr_order")) c.rcr_order = RelationshipTable::parse(j.at("rcr_order").get<std::string>());
}

void to_json(json& j, const LossConfig& c) {
  j = {{"temperature", c.temperature},
       {"dice_eps", c.dice_eps},
       {"kd_placement", to_string(c.kd_placement)},
       {"kd_detach_teacher", c.kd_detach_teacher},
       {"kd_weight", c.kd_weight},
       {"deep_supervision", c.deep_supervision},
       {"ds_exclude_lowest", c.ds_exclude_lowest}};
}

void from_json(const json& j, LossConfig& c) {
  check_keys(j,
             {"temperature", "dice_eps", "kd_placement", "kd_detach_teacher", "kd_weight", "deep_supervision",
              "ds_exclude_lowest"},
             "loss");
  opt(j, "temperature", c.temperature);
  opt(j, "dice_eps", c.dice_eps);
  if (j.contains("kd_placement")) c.kd_placement = kd_placement_from_string(j.at("kd_placement").get<std::string>());
  opt(j, "kd_detach_teacher", c.kd_detach_teacher);
  opt(j, "kd_weight", c.kd_weight);
  opt(j, "deep_supervision", c.deep_supervision);
  opt(j, "ds_exclude_lowest", c.ds_exclude_lowest);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"iters_per_epoch", c.iters_per_epoch},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"poly_exponent", c.poly_exponent},
       {"momentum", c.momentum},
       {"nesterov", c.nesterov},
       {"grad_clip", c.grad_clip},
       {"patch", extent_json(c.patch)},
       {"seed", c.seed},
       {"perturb_granularity", c.perturb_granularity == PerturbGranularity::sample ? "sample" : "batch"},
       {"foreground_prob", c.foreground_prob},
       {"augment",
        {{"flip", c.augment.flip},
         {"noise", c.augment.noise},
         {"blur", c.augment.blur},
         {"rotate", c.augment.rotate},
         {"noise_sigma", c.augment.noise_sigma},
         {"blur_prob", c.augment.blur_prob},
         {"blur_sigma", c.augment.blur_sigma}}},
       {"profile", c.profile}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"epochs", "iters_per_epoch", "batch_size", "lr", "poly_exponent", "momentum", "nesterov", "grad_clip",
              "patch", "seed", "perturb_granularity", "foreground_prob", "augment", "profile"},
             "train");
  opt(j, "epochs", c.epochs);
  opt(j, "iters_per_epoch", c.iters_per_epoch);
  opt(j, "batch_size", c.batch_size);
  opt(j, "lr", c.lr);
  opt(j, "poly_exponent", c.poly_exponent);
  opt(j, "momentum", c.momentum);
  opt(j, "nesterov", c.nesterov);
  opt(j, "grad_clip", c.grad_clip);
  opt_extent(j, "patch", c.patch);
  opt(j, "seed", c.seed);
  if (j.contains("perturb_granularity")) {
    const auto g = j.at("perturb_granularity").get<std::string>();
    if (g == "sample") c.perturb_granularity = PerturbGranularity::sample;
    else if (g == "batch") c.perturb_granularity = PerturbGranularity::batch;
    else throw ContractViolation("unknown perturb_granularity '" + g + "'");
  }
  opt(j, "foreground_prob", c.foreground_prob);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    check_keys(a, {"flip", "noise", "blur", "rotate", "noise_sigma", "blur_prob", "blur_sigma"}, "train.augment");
    opt(a, "flip", c.augment.flip);
    opt(a, "noise", c.augment.noise);
    opt(a, "blur", c.augment.blur);
    opt(a, "rotate", c.augment.rotate);
    opt(a, "noise_sigma", c.augment.noise_sigma);
    opt(a, "blur_prob", c.augment.blur_prob);
    opt(a, "blur_sigma", c.augment.blur_sigma);
  }
  opt(j, "profile", c.profile);
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"window", extent_json(c.window)},
       {"overlap", c.overlap},
       {"both_empty_dsc", c.both_empty_dsc},
       {"et_threshold_full", c.et_threshold_full},
       {"full_volume", c.full_volume},
       {"et_threshold", c.et_threshold},
       {"postprocess", c.postprocess}};
}

void from_json(const json& j, EvalConfig& c) {
  check_keys(j, {"window", "overlap", "both_empty_dsc", "et_threshold_full", "full_volume", "et_threshold", "postprocess"},
             "eval");
  opt_extent(j, "window", c.window);
  opt(j, "overlap", c.overlap);
  opt(j, "both_empty_dsc", c.both_empty_dsc);
  opt(j, "et_threshold_full", c.et_threshold_full);
  opt(j, "full_volume", c.full_volume);
  opt(j, "et_threshold", c.et_threshold);
  opt(j, "postprocess", c.postprocess);
}

void to_json(json& j, const RunConfig& c) {
  j = {{"model", c.model}, {"loss", c.loss}, {"train", c.train}, {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j, {"model", "loss", "train", "eval"}, "");
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("eval")) from_json(j.at("eval"), c.eval);
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open config " + file.string());
  RunConfig c;
  try {
    from_json(json::parse(is), c);
  } catch (const json::exception& ex) {
    throw ContractViolation("malformed config " + file.string() + ": " + ex.what());
  }
  c.validate();
  return c;
}

void save_run_config(const RunConfig& c, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write " + file.string());
  os << json(c).dump(2) << '\n';
}

}  // namespace demoseg
