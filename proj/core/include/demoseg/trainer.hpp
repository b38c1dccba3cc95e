// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch sampling, augmentation, momentum SGD and the training loop.
// Every random draw comes from one Rng seeded by TrainConfig::seed, so a run
// is a pure function of (manifest, config) and can resume from a checkpoint.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "demoseg/backbone.hpp"
#include "demoseg/config.hpp"
#include "demoseg/losses.hpp"
#include "demoseg/rng.hpp"
#include "demoseg/volume_io.hpp"

namespace demoseg {

/// lr0 * (1 - epoch / epochs)^gamma.
double poly_lr(int epoch, const TrainConfig& cfg);

/// A case held in memory: z-scored inputs and labels.
struct TrainingCase {
  std::string case_id;
  ModalityImages<float> images;
  LabelVolume labels;
  std::vector<std::int64_t> foreground;  ///< flat indices of label > 0

  static TrainingCase from_record(const CaseRecord& record);
  Extent3 extent() const { return labels.extent; }
};

struct Sample {
  ModalityImages<float> images;  ///< [1, d, h, w] each
  LabelVolume labels;
  Extent3 offset{};
  std::string case_id;
};

/// Aligned crop. With probability `foreground_prob` (and a tumour present) the
/// patch is centred on a random tumour voxel, clamped to the volume.
Sample sample_patch(const TrainingCase& c, const Extent3& patch, Rng& rng, double foreground_prob);
Sample crop(const TrainingCase& c, const Extent3& offset, const Extent3& patch);

/// Geometric helpers, applied to all modalities and labels alike. axis 0..2 = d, h, w.
void flip_axis(Sample& s, int axis);
/// k quarter turns in the plane of (axis_a, axis_b); both axes must have equal length.
void rotate90(Sample& s, int axis_a, int axis_b, int k);
/// Separable Gaussian blur of one [1, d, h, w] image, replicate borders.
void gaussian_blur(Tensor<float>& image, double sigma);

/// Flips (p = 0.5 per axis), quarter turns, Gaussian blur (per modality) and
/// additive Gaussian noise. Intensity transforms never touch labels.
void augment(Sample& s, Rng& rng, const AugmentToggles& toggles);

/// Momentum SGD; the nesterov form uses p -= lr * (g + mu * v) with v = mu * v + g.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, bool nesterov) : momentum_(momentum), nesterov_(nesterov) {}
  void step(ParameterStore<T>& params, double lr);
  std::vector<Tensor<T>>& buffers() { return velocity_; }
  const std::vector<Tensor<T>>& buffers() const { return velocity_; }

 private:
  double momentum_;
  bool nesterov_;
  std::vector<Tensor<T>> velocity_;
};

/// Global L2 norm of all parameter gradients.
template <typename T>
double grad_norm(const ParameterStore<T>& params);

struct Checkpoint {
  RunConfig config;
  std::uint64_t config_hash = 0;
  std::int64_t epoch = 0;      ///< completed epochs
  std::int64_t iteration = 0;  ///< completed iterations
  std::string rng_state;
  ParameterStore<float> params;
  std::vector<Tensor<float>> momentum;

  void save(const std::filesystem::path& file) const;
  /// Throws DataError on a corrupt file or a config hash mismatch.
  static Checkpoint load(const std::filesystem::path& file);
};

struct IterationLog {
  std::int64_t iter = 0;
  double lr = 0;
  double seg = 0;
  double kd = 0;
  double total = 0;
  std::vector<ModalityIndicator> delta;
  double seconds = 0;
};

std::string to_jsonl(const IterationLog& log);

struct TrainOptions {
  /// Receives metrics.jsonl, checkpoint.bin and config.json when set.
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop once this many epochs have completed (for interrupted runs); < 0 runs to the end.
  int stop_after_epoch = -1;
  std::function<void(const IterationLog&)> on_iteration;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<IterationLog> log;  ///< iterations run by this call
};

/// Trains on `cases` (already loaded). NaN or infinite loss throws NumericError
/// after writing nan_dump.json to the output directory.
TrainResult train(const std::vector<TrainingCase>& cases, const RunConfig& cfg, const TrainOptions& opt = {});

/// Loads the manifest's train split and trains.
TrainResult train(const DatasetManifest& manifest, const RunConfig& cfg, const TrainOptions& opt = {});

std::vector<TrainingCase> load_training_cases(const DatasetManifest& manifest, const std::string& split);

}  // namespace demoseg
