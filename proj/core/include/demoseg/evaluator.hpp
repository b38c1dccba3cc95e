// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Region Dice, ET clean-up, sliding-window inference, the 15-scenario table
// and the efficiency factor.

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "demoseg/backbone.hpp"
#include "demoseg/config.hpp"
#include "demoseg/trainer.hpp"
#include "demoseg/volume_io.hpp"

namespace demoseg {

enum class Region { WT = 0, TC = 1, ET = 2 };
inline constexpr std::array<Region, 3> kRegions{Region::WT, Region::TC, Region::ET};
std::string_view name_of(Region r);

/// WT = {1,2,3}, TC = {1,3}, ET = {3}.
Mask region_mask(const LabelVolume& labels, Region r);

/// 2|A n B| / (|A| + |B|); `both_empty` when neither mask has a voxel.
double dsc(const Mask& a, const Mask& b, double both_empty = 1.0);

/// Every ET voxel becomes class 1 when the ET count is strictly below `threshold`.
LabelVolume postprocess_et(LabelVolume labels, double threshold);

using RegionScores = std::array<double, 3>;  // WT, TC, ET

RegionScores region_dsc(const LabelVolume& pred, const LabelVolume& truth, double both_empty = 1.0);

struct DSCReport {
  std::string case_id;
  ModalityIndicator delta = ModalityIndicator::full();
  RegionScores dsc{};
};

/// Window origins along one axis: stride = round(window * (1 - overlap)), last
/// window flush with the end.
std::vector<std::int64_t> window_starts(std::int64_t size, std::int64_t window, double overlap);

/// Logits averaged uniformly over overlapping windows: [K, D, H, W].
Tensor<float> sliding_window_logits(const SegmentationNet<float>& net, const ModalityImages<float>& images,
                                    const ModalityIndicator& delta, const Extent3& window, double overlap);

LabelVolume argmax_labels(const Tensor<float>& logits);

struct ScenarioRow {
  ModalityIndicator delta = ModalityIndicator::full();
  RegionScores dsc{};
  std::vector<DSCReport> cases;
};

struct ScenarioTable {
  std::vector<ScenarioRow> rows;
  RegionScores average{};

  /// Arithmetic mean of the rows.
  void finalize();
  const ScenarioRow& row(const ModalityIndicator& delta) const;
  std::size_t row_count() const { return rows.size() + 1; }
  /// Columns fl t1 tc t2 WT TC ET, 1/0 marks, plus the average row.
  std::string to_tsv() const;
  /// Same layout with filled / open circles.
  std::string to_text() const;
};

/// Scenario rows in the published table order (single modalities first, full last).
std::vector<ModalityIndicator> table_scenario_order();

/// Any model: maps (case, delta) to a label map before post-processing.
using Segmenter = std::function<LabelVolume(const TrainingCase&, const ModalityIndicator&)>;

ScenarioTable evaluate_scenarios(const Segmenter& segmenter, const std::vector<TrainingCase>& cases,
                                 const EvalConfig& cfg, const std::vector<ModalityIndicator>& scenarios);

/// Network segmenter with sliding windows; window defaults to the training patch.
Segmenter network_segmenter(const SegmentationNet<float>& net, const EvalConfig& cfg, const Extent3& train_patch);

/// Evaluates a checkpoint on the manifest's test split. Throws DataError on an empty split.
ScenarioTable evaluate_scenarios(const Checkpoint& checkpoint, const DatasetManifest& manifest, const EvalConfig& cfg,
                                 std::optional<RelationshipTable> rcr_order = std::nullopt,
                                 std::vector<ModalityIndicator> scenarios = {});

struct EfficiencyInput {
  double delta_dsc = 0;  ///< percent
  double param_m = 0;    ///< millions
  double flops_g = 0;    ///< billions
  double eta = 1;
  double lambda = 0.5;
  double mu = 0.5;
};

/// delta_dsc / (lambda * param + mu * flops / eta^3).
double efficiency_factor(const EfficiencyInput& in);

}  // namespace demoseg
