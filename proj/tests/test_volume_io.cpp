// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "demoseg/error.hpp"
#include "demoseg/volume_io.hpp"

namespace demoseg {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("demoseg_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PhantomSpec spec32(std::uint64_t seed) {
  PhantomSpec s;
  s.shape = {32, 32, 32};
  s.seed = seed;
  return s;
}

void expect_invariants(const CaseRecord& r) {
  EXPECT_NO_THROW(r.validate());
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    EXPECT_LE(r.labels.data[i], 3);
    if (r.labels.data[i] > 0) EXPECT_EQ(r.brain_mask.data[i], 1);
  }
  for (const auto& v : r.volumes) {
    EXPECT_EQ(v.extent, r.labels.extent);
    for (float x : v.data) ASSERT_TRUE(std::isfinite(x));
  }
}

TEST(Phantom, Deterministic) {
  EXPECT_EQ(generate_phantom(spec32(7)), generate_phantom(spec32(7)));
}

TEST(Phantom, SeedsDifferInvariantsHold) {
  auto a = generate_phantom(spec32(7)), b = generate_phantom(spec32(8));
  EXPECT_NE(a.volumes[0].data, b.volumes[0].data);
  expect_invariants(a);
  expect_invariants(b);
}

TEST(Phantom, NestedRegionsOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto r = generate_phantom(PhantomSpec::randomized({32, 32, 32}, seed));
    expect_invariants(r);
    std::set<int> present(r.labels.data.begin(), r.labels.data.end());
    EXPECT_TRUE(present.count(2)) << seed;
    EXPECT_TRUE(present.count(3)) << seed;
    std::int64_t wt = 0, tc = 0, et = 0;
    for (auto v : r.labels.data) {
      wt += v > 0;
      tc += v == 1 || v == 3;
      et += v == 3;
    }
    EXPECT_GE(wt, tc);
    EXPECT_GE(tc, et);
  }
}

TEST(Phantom, ZeroEtRadius) {
  auto s = spec32(3);
  s.et_radii = {0, 0, 0};
  auto r = generate_phantom(s);
  EXPECT_EQ(std::count(r.labels.data.begin(), r.labels.data.end(), 3), 0);
  expect_invariants(r);
}

TEST(Phantom, RejectsBadRadii) {
  auto s = spec32(1);
  s.wt_radii = {20, 20, 20};
  EXPECT_THROW(generate_phantom(s), ContractViolation);
  s = spec32(1);
  s.tc_radii = {9, 5, 5};
  EXPECT_THROW(generate_phantom(s), ContractViolation);
}

TEST(Phantom, ModalityContrastFollowsProfile) {
  auto r = generate_phantom(spec32(11));
  auto mean_where = [&](Modality m, auto pred) {
    double acc = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < r.labels.size(); ++i)
      if (r.brain_mask.data[i] && pred(r.labels.data[i])) {
        acc += r.volumes[index_of(m)].data[i];
        ++n;
      }
    return acc / static_cast<double>(n);
  };
  auto healthy = [](int l) { return l == 0; };
  auto edema = [](int l) { return l == 2; };
  auto et = [](int l) { return l == 3; };
  auto core = [](int l) { return l == 1 || l == 3; };
  EXPECT_GT(mean_where(Modality::fl, edema), mean_where(Modality::fl, healthy) + 0.8);
  EXPECT_GT(mean_where(Modality::t2, edema), mean_where(Modality::t2, healthy) + 0.8);
  EXPECT_GT(mean_where(Modality::tc, et), mean_where(Modality::tc, healthy) + 0.8);
  EXPECT_LT(mean_where(Modality::t1, core), mean_where(Modality::t1, healthy) - 0.2);
}

TEST(Zscore, TwoPoint) {
  Volume v(Extent3{1, 1, 3});
  v.data = {1.0f, 3.0f, 9.0f};
  Mask m(Extent3{1, 1, 3});
  m.data = {1, 1, 0};
  auto z = zscore_normalize(v, m);
  EXPECT_FLOAT_EQ(z.data[0], -1.0f);
  EXPECT_FLOAT_EQ(z.data[1], 1.0f);
  EXPECT_EQ(z.data[2], 0.0f);
}

TEST(Zscore, RandomStatsAndIdempotence) {
  Rng rng(5);
  Volume v(Extent3{8, 8, 8});
  for (auto& x : v.data) x = static_cast<float>(3.0 + 2.5 * rng.normal());
  Mask m(Extent3{8, 8, 8}, 1);
  auto z = zscore_normalize(v, m);
  double mean = 0, var = 0;
  for (float x : z.data) mean += x;
  mean /= 512;
  for (float x : z.data) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-5);
  EXPECT_NEAR(std::sqrt(var / 512), 1.0, 1e-5);
  auto zz = zscore_normalize(z, m);
  for (std::size_t i = 0; i < 512; ++i) EXPECT_NEAR(zz.data[i], z.data[i], 1e-6);
}

TEST(Zscore, Degenerate) {
  Volume v(Extent3{2, 2, 2}, 4.0f);
  Mask m(Extent3{2, 2, 2}, 1);
  EXPECT_THROW(zscore_normalize(v, m), NumericError);
  Mask one(Extent3{2, 2, 2});
  one.data[0] = 1;
  v.data[0] = 1.0f;
  EXPECT_THROW(zscore_normalize(v, one), NumericError);
}

TEST(CaseIo, RoundTrip) {
  auto dir = scratch("rt");
  auto r = generate_phantom(spec32(7));
  r.case_id = "case_x";
  save_case(r, dir / "case_x");
  auto back = load_case(dir / "case_x");
  EXPECT_EQ(back, r);
  auto header = nlohmann::json::parse(std::ifstream(dir / "case_x" / "header.json"));
  EXPECT_EQ(header["dtype"], "f32");
  EXPECT_EQ(header["shape"], nlohmann::json::array({32, 32, 32}));
  EXPECT_EQ(header["modalities"], nlohmann::json::array({"t1", "tc", "t2", "fl"}));
  EXPECT_EQ(fs::file_size(dir / "case_x" / "t1.raw"), 32u * 32 * 32 * 4);
  fs::remove_all(dir);
}

TEST(CaseIo, TruncatedPayload) {
  auto dir = scratch("trunc");
  auto r = generate_phantom(spec32(2));
  save_case(r, dir / "c");
  fs::resize_file(dir / "c" / "tc.raw", 32 * 32 * 32 * 4 - 4);
  EXPECT_THROW(load_case(dir / "c"), DataError);
  fs::remove_all(dir);
}

TEST(CaseIo, HeaderErrors) {
  auto dir = scratch("hdr");
  auto r = generate_phantom(spec32(2));
  save_case(r, dir / "c");
  auto header = nlohmann::json::parse(std::ifstream(dir / "c" / "header.json"));
  header["dtype"] = "f64";
  std::ofstream(dir / "c" / "header.json") << header.dump();
  EXPECT_THROW(load_case(dir / "c"), DataError);
  header["dtype"] = "f32";
  header["modalities"] = {"t1", "t2", "tc", "fl"};
  std::ofstream(dir / "c" / "header.json") << header.dump();
  EXPECT_THROW(load_case(dir / "c"), DataError);
  EXPECT_THROW(load_case(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST(CaseIo, HandWrittenEightCube) {
  auto dir = scratch("hand") / "tiny";
  fs::create_directories(dir);
  std::ofstream(dir / "header.json") << R"({"shape":[8,8,8],"dtype":"f32","modalities":["t1","tc","t2","fl"]})";
  for (const char* m : {"t1", "tc", "t2", "fl"}) {
    std::ofstream os(dir / (std::string(m) + ".raw"), std::ios::binary);
    for (int i = 0; i < 512; ++i) {
      float v = static_cast<float>(i % 7);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  {
    std::ofstream os(dir / "labels.raw", std::ios::binary);
    for (int i = 0; i < 512; ++i) os.put(static_cast<char>(i < 10 ? 2 : 0));
  }
  {
    std::ofstream os(dir / "mask.raw", std::ios::binary);
    for (int i = 0; i < 512; ++i) os.put(1);
  }
  auto r = load_case(dir);
  EXPECT_EQ(r.case_id, "tiny");
  EXPECT_EQ(r.labels.extent, (Extent3{8, 8, 8}));
  EXPECT_EQ(r.labels.data[3], 2);
  EXPECT_EQ(r.volumes[2].data[9], 2.0f);
  fs::remove_all(dir.parent_path());
}

TEST(Manifest, PartitionAndRoundTrip) {
  std::vector<std::string> paths;
  for (int i = 0; i < 10; ++i) paths.push_back("cases/case_" + std::to_string(i));
  auto m = partition_cases(paths, 1);
  EXPECT_EQ(m.train.size(), 7u);
  EXPECT_EQ(m.val.size(), 1u);
  EXPECT_EQ(m.test.size(), 2u);
  std::set<std::string> all(m.train.begin(), m.train.end());
  all.insert(m.val.begin(), m.val.end());
  all.insert(m.test.begin(), m.test.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(partition_cases(paths, 1).test, m.test);

  auto dir = scratch("manifest");
  for (const auto& p : paths) fs::create_directories(dir / p);
  save_manifest(m, dir / "manifest.json");
  auto back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back.train, m.train);
  EXPECT_EQ(back.test, m.test);
  EXPECT_EQ(back.base, dir);
  fs::remove_all(dir / m.test[0]);
  EXPECT_THROW(load_manifest(dir / "manifest.json"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, OverlappingSplitsRejected) {
  DatasetManifest m;
  m.base = fs::temp_directory_path();
  m.train = {"."};
  m.test = {"."};
  EXPECT_THROW(m.validate(), DataError);
}

}  // namespace
}  // namespace demoseg
