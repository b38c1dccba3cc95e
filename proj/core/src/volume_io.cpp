// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "demoseg/error.hpp"
#include "demoseg/rng.hpp"

namespace demoseg {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw payloads are written in host order");

void CaseRecord::validate() const {
  const Extent3 e = labels.extent;
  if (e.d <= 0 || e.h <= 0 || e.w <= 0) throw DataError("case " + case_id + ": empty extent");
  if (brain_mask.extent != e) throw DataError("case " + case_id + ": mask shape differs from labels");
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto& v = volumes[m];
    if (v.extent != e) throw DataError("case " + case_id + ": volume " + std::string(name_of(kModalities[m])) + " shape differs");
    if (v.size() != static_cast<std::size_t>(e.voxels())) throw DataError("case " + case_id + ": volume size");
    for (float x : v.data) {
      if (!std::isfinite(x)) throw DataError("case " + case_id + ": non-finite intensity");
    }
  }
  if (labels.size() != static_cast<std::size_t>(e.voxels()) || brain_mask.size() != labels.size())
    throw DataError("case " + case_id + ": label or mask size");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.data[i] >= kNumLabels) throw DataError("case " + case_id + ": label id out of range");
    if (brain_mask.data[i] > 1) throw DataError("case " + case_id + ": mask value not boolean");
    if (labels.data[i] != 0 && brain_mask.data[i] == 0)
      throw DataError("case " + case_id + ": labelled voxel outside brain mask");
  }
}

// ---------------------------------------------------------------- phantoms

std::array<IntensityProfile, kNumModalities> PhantomSpec::default_profiles() {
  constexpr RegionIntensity bg{0.0, 0.05};
  constexpr double s = 0.2;
  // background, healthy, edema, necrotic, enhancing
  return {{
      {bg, {1.0, s}, {0.7, s}, {0.35, s}, {0.85, s}},   // t1
      {bg, {1.0, s}, {0.7, s}, {0.45, s}, {2.2, s}},    // tc
      {bg, {1.0, s}, {2.0, s}, {2.4, s}, {1.5, s}},     // t2
      {bg, {1.0, s}, {2.3, s}, {1.3, s}, {1.6, s}},     // fl
  }};
}

PhantomSpec PhantomSpec::randomized(Extent3 shape, std::uint64_t seed) {
  PhantomSpec spec;
  spec.shape = shape;
  spec.seed = seed;
  Rng rng(seed ^ 0x5eedULL);
  const std::array<double, 3> dims{double(shape.d), double(shape.h), double(shape.w)};
  for (int a = 0; a < 3; ++a) {
    const double wt = dims[a] * rng.uniform(0.18, 0.26);
    const double tc = wt * rng.uniform(0.5, 0.65);
    const double et = tc * rng.uniform(0.8, 0.95);
    spec.wt_radii[a] = wt;
    spec.tc_radii[a] = tc;
    spec.et_radii[a] = et;
  }
  spec.necrosis_fraction = rng.uniform(0.4, 0.6);
  return spec;
}

void PhantomSpec::validate() const {
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) throw ContractViolation("phantom shape must be positive");
  if (!(jitter >= 0.0 && jitter < 0.5)) throw ContractViolation("phantom jitter must lie in [0, 0.5)");
  if (!(necrosis_fraction >= 0.0 && necrosis_fraction < 1.0))
    throw ContractViolation("necrosis fraction must lie in [0, 1)");
  if (!(brain_fraction > 0.0 && brain_fraction <= 0.5)) throw ContractViolation("brain fraction must lie in (0, 0.5]");
  const std::array<double, 3> dims{double(shape.d), double(shape.h), double(shape.w)};
  for (int a = 0; a < 3; ++a) {
    if (!(wt_radii[a] > 0) || !(tc_radii[a] > 0) || !(et_radii[a] >= 0))
      throw ContractViolation("phantom radii must be positive (ET may be 0)");
    if (tc_radii[a] > wt_radii[a] || et_radii[a] > tc_radii[a])
      throw ContractViolation("phantom radii must nest: ET <= TC <= WT");
    if (wt_radii[a] * (1.0 + jitter) + 1.0 > brain_fraction * dims[a])
      throw ContractViolation("phantom WT radius " + std::to_string(wt_radii[a]) + " does not fit the brain of shape " +
                              std::to_string(static_cast<long long>(dims[a])));
  }
}

namespace {

struct Wave {
  std::array<double, 3> dir;
  double freq;
  double phase;
};

// Radial scale factor 1 + jitter * g(u) for a physical direction u, |g| <= 1.
double boundary_factor(const std::array<Wave, 3>& waves, double jitter, const std::array<double, 3>& u) {
  double g = 0.0;
  for (const auto& wv : waves) {
    const double proj = wv.dir[0] * u[0] + wv.dir[1] * u[1] + wv.dir[2] * u[2];
    g += std::sin(wv.freq * std::numbers::pi * proj + wv.phase);
  }
  return 1.0 + jitter * g / 3.0;
}

double ellipsoid_norm(const std::array<double, 3>& offset, const std::array<double, 3>& radii) {
  double q = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (radii[a] <= 0) return std::numeric_limits<double>::infinity();
    const double r = offset[a] / radii[a];
    q += r * r;
  }
  return std::sqrt(q);
}

}  // namespace

CaseRecord generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Extent3 e = spec.shape;
  const std::array<double, 3> dims{double(e.d), double(e.h), double(e.w)};
  const std::array<double, 3> centre{(dims[0] - 1) / 2, (dims[1] - 1) / 2, (dims[2] - 1) / 2};
  std::array<double, 3> brain_r{};
  for (int a = 0; a < 3; ++a) brain_r[a] = spec.brain_fraction * dims[a];

  // Tumour centre: random offset that keeps the jittered WT inside the brain.
  std::array<double, 3> tumour{};
  for (int a = 0; a < 3; ++a) {
    const double slack = std::max(0.0, brain_r[a] - spec.wt_radii[a] * (1.0 + spec.jitter) - 1.0);
    tumour[a] = centre[a] + rng.uniform(-0.5, 0.5) * slack / std::sqrt(3.0);
  }
  std::array<Wave, 3> waves{};
  for (auto& wv : waves) {
    std::array<double, 3> v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::max(1e-12, std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
    wv.dir = {v[0] / n, v[1] / n, v[2] / n};
    wv.freq = 1.0 + static_cast<double>(rng.below(3));
    wv.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::array<double, 3> core_r{};
  for (int a = 0; a < 3; ++a) core_r[a] = spec.et_radii[a] * spec.necrosis_fraction;
  const bool has_et = spec.et_radii[0] > 0 && spec.et_radii[1] > 0 && spec.et_radii[2] > 0;

  CaseRecord rec;
  rec.case_id = "phantom_" + std::to_string(spec.seed);
  rec.labels = LabelVolume(e, 0);
  rec.brain_mask = Mask(e, 0);

  for (std::int64_t d = 0; d < e.d; ++d) {
    for (std::int64_t h = 0; h < e.h; ++h) {
      for (std::int64_t w = 0; w < e.w; ++w) {
        const std::array<double, 3> p{double(d), double(h), double(w)};
        std::array<double, 3> bo{}, to{};
        for (int a = 0; a < 3; ++a) {
          bo[a] = p[a] - centre[a];
          to[a] = p[a] - tumour[a];
        }
        if (ellipsoid_norm(bo, brain_r) <= 1.0) rec.brain_mask.at(d, h, w) = 1;
        const double len = std::sqrt(to[0] * to[0] + to[1] * to[1] + to[2] * to[2]);
        const std::array<double, 3> u =
            len > 0 ? std::array<double, 3>{to[0] / len, to[1] / len, to[2] / len} : std::array<double, 3>{1, 0, 0};
        const double f = boundary_factor(waves, spec.jitter, u);
        std::uint8_t label = kBackground;
        if (ellipsoid_norm(to, spec.wt_radii) <= f) label = kEdema;
        if (ellipsoid_norm(to, spec.tc_radii) <= f) label = kNecrotic;
        if (has_et && ellipsoid_norm(to, spec.et_radii) <= f) {
          const bool core = spec.necrosis_fraction > 0 && ellipsoid_norm(to, core_r) <= f;
          label = core ? kNecrotic : kEnhancing;
        }
        rec.labels.at(d, h, w) = label;
      }
    }
  }

  // Smooth low-amplitude texture of healthy tissue, shared phase per modality.
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto& prof = spec.profiles[m];
    const double kx = rng.uniform(0.15, 0.4), ky = rng.uniform(0.15, 0.4), kz = rng.uniform(0.15, 0.4);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Volume v(e, 0.0f);
    for (std::int64_t d = 0; d < e.d; ++d) {
      for (std::int64_t h = 0; h < e.h; ++h) {
        for (std::int64_t w = 0; w < e.w; ++w) {
          const std::size_t i = v.index(d, h, w);
          const RegionIntensity* r = &prof.background;
          double texture = 0.0;
          if (rec.brain_mask.data[i]) {
            switch (rec.labels.data[i]) {
              case kEdema: r = &prof.edema; break;
              case kNecrotic: r = &prof.necrotic; break;
              case kEnhancing: r = &prof.enhancing; break;
              default:
                r = &prof.healthy;
                texture = 0.1 * std::sin(kx * double(d) + ky * double(h) + kz * double(w) + ph);
                break;
            }
          }
          v.data[i] = static_cast<float>(r->mean + texture + r->stddev * rng.normal());
        }
      }
    }
    rec.volumes[m] = std::move(v);
  }
  rec.validate();
  return rec;
}

Volume zscore_normalize(const Volume& v, const Mask& mask) {
  if (mask.extent != v.extent) throw ShapeError("zscore_normalize: mask shape differs from volume");
  double n = 0, sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.data[i]) {
      sum += v.data[i];
      n += 1;
    }
  }
  if (n < 2) throw NumericError("zscore_normalize: mask has fewer than 2 voxels");
  const double mean = sum / n;
  double ss = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.data[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
  }
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0) || !std::isfinite(sd)) throw NumericError("zscore_normalize: zero variance inside mask");
  Volume out(v.extent, 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.data[i]) out.data[i] = static_cast<float>((v.data[i] - mean) / sd);
  }
  return out;
}

// --------------------------------------------------------------------- disk

namespace {

template <typename V>
void write_raw(const fs::path& file, const std::vector<V>& data) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + file.string());
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(V)));
  if (!os) throw DataError("write failed: " + file.string());
}

template <typename V>
std::vector<V> read_raw(const fs::path& file, std::int64_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(file, ec);
  if (ec) throw DataError("cannot read " + file.string());
  const auto expected = static_cast<std::uintmax_t>(count) * sizeof(V);
  if (bytes < expected) {
    throw DataError("truncated payload " + file.string() + ": " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected));
  }
  if (bytes > expected) {
    throw DataError("payload size mismatch " + file.string() + ": " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected));
  }
  std::vector<V> out(static_cast<std::size_t>(count));
  std::ifstream is(file, std::ios::binary);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected));
  if (!is) throw DataError("read failed: " + file.string());
  return out;
}

}  // namespace

void save_case(const CaseRecord& record, const fs::path& dir) {
  record.validate();
  fs::create_directories(dir);
  const Extent3 e = record.labels.extent;
  json header = {{"shape", {e.d, e.h, e.w}}, {"dtype", "f32"}, {"modalities", json::array()}};
  for (Modality m : kModalities) header["modalities"].push_back(std::string(name_of(m)));
  {
    std::ofstream os(dir / "header.json", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "header.json").string());
    os << header.dump(2) << '\n';
  }
  for (std::size_t m = 0; m < kNumModalities; ++m)
    write_raw(dir / (std::string(name_of(kModalities[m])) + ".raw"), record.volumes[m].data);
  write_raw(dir / "labels.raw", record.labels.data);
  write_raw(dir / "mask.raw", record.brain_mask.data);
}

CaseRecord load_case(const fs::path& dir) {
  const fs::path hp = dir / "header.json";
  std::ifstream is(hp);
  if (!is) throw DataError("missing case header " + hp.string());
  json header;
  try {
    header = json::parse(is);
  } catch (const json::exception& ex) {
    throw DataError("malformed header " + hp.string() + ": " + ex.what());
  }
  if (!header.contains("dtype") || !header["dtype"].is_string()) throw DataError("header lacks dtype");
  if (header["dtype"] != "f32") throw DataError("unknown dtype '" + header["dtype"].get<std::string>() + "'");
  if (!header.contains("shape") || !header["shape"].is_array() || header["shape"].size() != 3)
    throw DataError("header shape must be [D, H, W]");
  Extent3 e{};
  try {
    e = {header["shape"][0].get<std::int64_t>(), header["shape"][1].get<std::int64_t>(),
         header["shape"][2].get<std::int64_t>()};
  } catch (const json::exception&) {
    throw DataError("header shape must hold integers");
  }
  if (e.d <= 0 || e.h <= 0 || e.w <= 0) throw DataError("header shape must be positive");
  if (header.contains("modalities")) {
    std::vector<std::string> names;
    for (Modality m : kModalities) names.push_back(std::string(name_of(m)));
    if (header["modalities"] != json(names)) throw DataError("header modality list mismatch");
  }

  CaseRecord rec;
  rec.case_id = dir.filename().string();
  if (rec.case_id.empty()) rec.case_id = dir.parent_path().filename().string();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    Volume v;
    v.extent = e;
    v.data = read_raw<float>(dir / (std::string(name_of(kModalities[m])) + ".raw"), e.voxels());
    rec.volumes[m] = std::move(v);
  }
  rec.labels.extent = e;
  rec.labels.data = read_raw<std::uint8_t>(dir / "labels.raw", e.voxels());
  rec.brain_mask.extent = e;
  rec.brain_mask.data = read_raw<std::uint8_t>(dir / "mask.raw", e.voxels());
  rec.validate();
  return rec;
}

// ----------------------------------------------------------------- manifest

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ContractViolation("unknown split '" + name + "'");
}

std::vector<fs::path> DatasetManifest::resolve(const std::string& split_name) const {
  std::vector<fs::path> out;
  for (const auto& p : split(split_name)) out.push_back(base / p);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto* s : {&train, &val, &test}) {
    for (const auto& p : *s) {
      if (!seen.insert(fs::path(p).lexically_normal().string()).second)
        throw DataError("manifest case listed twice: " + p);
      if (!fs::exists(base / p)) throw DataError("manifest path does not resolve: " + (base / p).string());
    }
  }
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  try {
    const json j = json::parse(is);
    m.seed = j.value("seed", std::uint64_t{0});
    m.train = j.value("train", std::vector<std::string>{});
    m.val = j.value("val", std::vector<std::string>{});
    m.test = j.value("test", std::vector<std::string>{});
  } catch (const json::exception& ex) {
    throw DataError("malformed manifest " + file.string() + ": " + ex.what());
  }
  m.base = file.parent_path();
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  const json j = {{"seed", manifest.seed}, {"train", manifest.train}, {"val", manifest.val}, {"test", manifest.test}};
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + file.string());
  os << j.dump(2) << '\n';
}

DatasetManifest partition_cases(const std::vector<std::string>& case_paths, std::uint64_t seed) {
  std::vector<std::string> order = case_paths;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n = static_cast<double>(order.size());
  const auto n_test = static_cast<std::size_t>(std::lround(0.2 * n));
  const auto n_val = static_cast<std::size_t>(std::lround(0.1 * n));
  DatasetManifest m;
  m.seed = seed;
  const std::size_t n_train = order.size() - n_test - n_val;
  m.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return m;
}

template <typename T>
std::array<Tensor<T>, kNumModalities> normalized_inputs(const CaseRecord& record) {
  std::array<Tensor<T>, kNumModalities> out;
  const Extent3 e = record.labels.extent;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const Volume z = zscore_normalize(record.volumes[m], record.brain_mask);
    Tensor<T> t(Shape{1, e.d, e.h, e.w});
    for (std::size_t i = 0; i < z.size(); ++i) t[i] = static_cast<T>(z.data[i]);
    out[m] = std::move(t);
  }
  return out;
}

template std::array<Tensor<float>, kNumModalities> normalized_inputs<float>(const CaseRecord&);
template std::array<Tensor<double>, kNumModalities> normalized_inputs<double>(const CaseRecord&);

}  // namespace demoseg
