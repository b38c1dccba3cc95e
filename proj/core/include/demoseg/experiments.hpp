// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset generation and the ablation harness.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "demoseg/config.hpp"
#include "demoseg/evaluator.hpp"
#include "demoseg/trainer.hpp"
#include "demoseg/volume_io.hpp"

namespace demoseg {

struct GenDataResult {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
  std::vector<std::string> warnings;
};

/// Writes `n` phantoms to out/cases/case_NNN and out/manifest.json (70/10/20).
/// A non-empty `out` is rejected unless `force`, which replaces cases/ and
/// manifest.json only. Warns when `shape` does not suit `model`.
GenDataResult generate_dataset(int n, const Extent3& shape, std::uint64_t seed, const std::filesystem::path& out,
                               bool force = false, const ModelConfig& model = ModelConfig::desk());

enum class AblationKind { components, rcr_order, kd_placement };
AblationKind ablation_kind_from_string(const std::string& s);
std::string to_string(AblationKind k);

struct AblationVariant {
  std::vector<std::string> settings;  ///< one entry per setting column
  RunConfig config;
};

/// Variants in the published row order.
std::vector<AblationVariant> ablation_variants(AblationKind kind, const RunConfig& base);
std::vector<std::string> ablation_columns(AblationKind kind);

struct AblationRow {
  std::vector<std::string> settings;
  RegionScores dsc{};  ///< mean over the evaluated scenarios
  double final_loss = 0;
};

struct AblationReport {
  AblationKind kind = AblationKind::components;
  std::vector<std::string> columns;
  std::vector<AblationRow> rows;

  std::string to_tsv() const;
  std::string to_text() const;
};

struct AblationOptions {
  std::optional<std::filesystem::path> out_dir;  ///< per-variant runs go to out/variant_K
  std::vector<ModalityIndicator> scenarios;      ///< empty = all 15
  std::function<void(const std::string&)> progress;
};

AblationReport run_ablation(AblationKind kind, const std::vector<TrainingCase>& train_cases,
                            const std::vector<TrainingCase>& test_cases, const RunConfig& base,
                            const AblationOptions& opt = {});

}  // namespace demoseg
