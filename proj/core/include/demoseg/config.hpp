// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss, training and evaluation settings, and their JSON form. A run config
// file holds up to four sections: {"model", "loss", "train", "eval"}.
// Unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "demoseg/model_config.hpp"
#include "demoseg/tensor.hpp"

namespace demoseg {

enum class KdPlacement { none, before_cssa, after_cssa };
std::string to_string(KdPlacement p);
KdPlacement kd_placement_from_string(const std::string& s);

struct LossConfig {
  double temperature = 1.0;
  double dice_eps = 1e-5;
  KdPlacement kd_placement = KdPlacement::before_cssa;
  bool kd_detach_teacher = true;
  double kd_weight = 1.0;
  bool deep_supervision = true;
  /// Drop the lowest-resolution head from deep supervision.
  bool ds_exclude_lowest = false;
};

enum class PerturbGranularity { sample, batch };

struct AugmentToggles {
  bool flip = true;
  bool noise = true;
  bool blur = true;
  bool rotate = true;
  double noise_sigma = 0.1;
  double blur_prob = 0.2;
  double blur_sigma = 0.75;
  friend bool operator==(const AugmentToggles&, const AugmentToggles&) = default;
};

struct TrainConfig {
  int epochs = 20;
  int iters_per_epoch = 50;
  int batch_size = 2;
  double lr = 0.01;
  double poly_exponent = 0.9;
  double momentum = 0.99;
  bool nesterov = true;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 12.0;
  Extent3 patch{16, 16, 16};
  std::uint64_t seed = 0;
  PerturbGranularity perturb_granularity = PerturbGranularity::sample;
  /// Probability that a patch is centred on a tumour voxel.
  double foreground_prob = 0.67;
  AugmentToggles augment;
  std::string profile = "desk";

  std::int64_t total_iters() const { return static_cast<std::int64_t>(epochs) * iters_per_epoch; }
  void validate(const ModelConfig& model) const;
};

struct EvalConfig {
  /// Sliding-window size; zero extent means "use the training patch".
  Extent3 window{0, 0, 0};
  double overlap = 0.5;
  double both_empty_dsc = 1.0;
  /// ET voxel threshold at full resolution, scaled by case volume / full volume.
  double et_threshold_full = 500;
  double full_volume = 240.0 * 240.0 * 155.0;
  /// Explicit threshold; negative means use the scaled default.
  double et_threshold = -1;
  bool postprocess = true;

  double et_threshold_for(std::int64_t case_voxels) const;
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  /// Stable hash of the serialised config.
  std::uint64_t hash() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing sections or keys keep their defaults. A "model.profile" of "full"
/// starts from ModelConfig::full() before applying the remaining keys.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& file);
void save_run_config(const RunConfig& c, const std::filesystem::path& file);

}  // namespace demoseg
