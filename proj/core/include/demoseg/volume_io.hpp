// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Case storage, synthetic phantoms and intensity normalisation.
//
// On disk a case is a directory:
//   header.json   {"shape":[D,H,W],"dtype":"f32","modalities":["t1","tc","t2","fl"]}
//   t1.raw tc.raw t2.raw fl.raw   little-endian float32, C order (D, H, W)
//   labels.raw    uint8 class ids {0,1,2,3}
//   mask.raw      uint8 brain mask {0,1}

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "demoseg/modality.hpp"
#include "demoseg/tensor.hpp"

namespace demoseg {

namespace fs = std::filesystem;

/// Label ids. Regions: WT = {1,2,3}, TC = {1,3}, ET = {3}.
enum Label : std::uint8_t { kBackground = 0, kNecrotic = 1, kEdema = 2, kEnhancing = 3 };
inline constexpr int kNumLabels = 4;

template <typename V>
struct Grid {
  Extent3 extent;
  std::vector<V> data;

  Grid() = default;
  explicit Grid(Extent3 e, V fill = V{}) : extent(e), data(static_cast<std::size_t>(e.voxels()), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>((d * extent.h + h) * extent.w + w);
  }
  V& at(std::int64_t d, std::int64_t h, std::int64_t w) { return data[index(d, h, w)]; }
  const V& at(std::int64_t d, std::int64_t h, std::int64_t w) const { return data[index(d, h, w)]; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Volume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;
using Mask = Grid<std::uint8_t>;

struct CaseRecord {
  std::string case_id;
  std::array<Volume, kNumModalities> volumes;  ///< t1, tc, t2, fl
  LabelVolume labels;
  Mask brain_mask;

  /// Throws DataError if shapes differ, labels are out of range, values are
  /// non-finite, or a labelled voxel lies outside the brain mask.
  void validate() const;
  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

struct RegionIntensity {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Per-modality tissue appearance.
struct IntensityProfile {
  RegionIntensity background;  ///< outside the brain
  RegionIntensity healthy;
  RegionIntensity edema;
  RegionIntensity necrotic;
  RegionIntensity enhancing;
};

struct PhantomSpec {
  Extent3 shape{32, 32, 32};
  std::uint64_t seed = 0;
  /// Ellipsoid semi-axes in voxels (d, h, w); ET <= TC <= WT per axis.
  std::array<double, 3> wt_radii{8, 8, 8};
  std::array<double, 3> tc_radii{5, 5, 5};
  std::array<double, 3> et_radii{4.5, 4.5, 4.5};
  /// Necrotic core inside the enhancing shell, as a fraction of the ET radii.
  double necrosis_fraction = 0.5;
  /// Relative amplitude of the smooth boundary perturbation, in [0, 0.5).
  double jitter = 0.15;
  /// Brain ellipsoid semi-axes as a fraction of the volume shape.
  double brain_fraction = 0.45;
  std::array<IntensityProfile, kNumModalities> profiles = default_profiles();

  /// fl and t2 separate edema, tc separates the enhancing rim, t1 shows the
  /// core moderately; every modality carries some whole-tumour contrast.
  static std::array<IntensityProfile, kNumModalities> default_profiles();
  /// Case-to-case variation of radii for a given shape, drawn from `seed`.
  static PhantomSpec randomized(Extent3 shape, std::uint64_t seed);

  /// Throws ContractViolation when radii are not nested/positive or do not fit.
  void validate() const;
};

CaseRecord generate_phantom(const PhantomSpec& spec);

/// Zero mean / unit variance over masked voxels; voxels outside the mask become 0.
/// Throws NumericError if the mask has < 2 voxels or zero variance.
Volume zscore_normalize(const Volume& v, const Mask& mask);

/// Writes `dir` (created if needed) in the layout above.
void save_case(const CaseRecord& record, const fs::path& dir);
/// Reads a case directory; the case id is the directory name.
CaseRecord load_case(const fs::path& dir);

struct DatasetManifest {
  std::uint64_t seed = 0;
  /// Case paths relative to `base` (the manifest's directory).
  std::vector<std::string> train, val, test;
  fs::path base;

  const std::vector<std::string>& split(const std::string& name) const;
  std::vector<fs::path> resolve(const std::string& split_name) const;
  /// Throws DataError if splits overlap or a path does not exist.
  void validate() const;
};

DatasetManifest load_manifest(const fs::path& file);
void save_manifest(const DatasetManifest& manifest, const fs::path& file);

/// Seeded 70/10/20 partition of `case_paths` (test and val sizes rounded to nearest).
DatasetManifest partition_cases(const std::vector<std::string>& case_paths, std::uint64_t seed);

/// Network input for one case: z-scored modality volumes as [1, D, H, W] tensors.
template <typename T>
std::array<Tensor<T>, kNumModalities> normalized_inputs(const CaseRecord& record);

}  // namespace demoseg
