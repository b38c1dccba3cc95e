// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "demoseg/error.hpp"
#include "demoseg/evaluator.hpp"

namespace demoseg {
namespace {

Mask mask_with(std::int64_t n, std::initializer_list<int> on) {
  Mask m(Extent3{1, 1, n});
  for (int i : on) m.data[i] = 1;
  return m;
}

TEST(Dsc, BasicCases) {
  auto a = mask_with(16, {0, 1, 2, 3, 4, 5, 6, 7});
  auto b = mask_with(16, {4, 5, 6, 7, 8, 9, 10, 11});
  auto c = mask_with(16, {12, 13});
  EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dsc(a, c), 0.0);
  EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dsc(b, a), dsc(a, b));
  auto empty = mask_with(16, {});
  EXPECT_DOUBLE_EQ(dsc(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(dsc(empty, empty, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(dsc(empty, a), 0.0);
  EXPECT_THROW(dsc(a, mask_with(8, {})), ShapeError);
}

TEST(Dsc, SymmetricOnRandomMasks) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    Mask a(Extent3{4, 4, 4}), b(Extent3{4, 4, 4});
    std::int64_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      a.data[i] = rng.bernoulli(0.3);
      b.data[i] = rng.bernoulli(0.4);
      na += a.data[i];
      nb += b.data[i];
      inter += a.data[i] && b.data[i];
    }
    double want = na + nb == 0 ? 1.0 : 2.0 * inter / double(na + nb);
    EXPECT_DOUBLE_EQ(dsc(a, b), want);
    EXPECT_DOUBLE_EQ(dsc(b, a), want);
  }
}

TEST(Regions, NestedLabels) {
  LabelVolume l(Extent3{1, 1, 4});
  l.data = {0, 1, 2, 3};
  EXPECT_EQ(region_mask(l, Region::WT).data, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  EXPECT_EQ(region_mask(l, Region::TC).data, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(region_mask(l, Region::ET).data, (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

LabelVolume with_et(std::int64_t count) {
  LabelVolume l(Extent3{10, 10, 10}, 2);
  for (std::int64_t i = 0; i < count; ++i) l.data[i] = 3;
  return l;
}

TEST(PostprocessEt, Threshold) {
  auto below = postprocess_et(with_et(499), 500);
  EXPECT_EQ(std::count(below.data.begin(), below.data.end(), 3), 0);
  EXPECT_EQ(std::count(below.data.begin(), below.data.end(), 1), 499);
  auto at = postprocess_et(with_et(500), 500);
  EXPECT_EQ(at, with_et(500));
  auto none = postprocess_et(with_et(0), 500);
  EXPECT_EQ(none, with_et(0));
  for (std::int64_t n : {0, 10, 499, 500, 900}) {
    auto once = postprocess_et(with_et(n), 500);
    EXPECT_EQ(postprocess_et(once, 500), once);
  }
}

TEST(PostprocessEt, ScaledThreshold) {
  EvalConfig cfg;
  EXPECT_NEAR(cfg.et_threshold_for(240 * 240 * 155), 500.0, 1e-9);
  EXPECT_NEAR(cfg.et_threshold_for(32 * 32 * 32), 500.0 * 32768 / (240.0 * 240 * 155), 1e-12);
  cfg.et_threshold = 7;
  EXPECT_EQ(cfg.et_threshold_for(32 * 32 * 32), 7.0);
}

TEST(SlidingWindow, StartsCoverVolume) {
  EXPECT_EQ(window_starts(32, 16, 0.5), (std::vector<std::int64_t>{0, 8, 16}));
  EXPECT_EQ(window_starts(16, 16, 0.5), (std::vector<std::int64_t>{0}));
  EXPECT_EQ(window_starts(20, 16, 0.5), (std::vector<std::int64_t>{0, 4}));
  for (std::int64_t size : {16, 24, 33, 40}) {
    auto s = window_starts(size, 16, 0.5);
    EXPECT_EQ(s.front(), 0);
    EXPECT_EQ(s.back() + 16, size);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE(s[i] - s[i - 1], 16);
  }
}

TEST(SlidingWindow, SingleWindowMatchesForward) {
  SegmentationNet<float> net(ModelConfig::desk(), 2);
  ModalityImages<float> imgs;
  Rng rng(3);
  for (auto& t : imgs) {
    t = Tensor<float>({1, 16, 16, 16});
    for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
  }
  auto d = ModalityIndicator::from_string("1011");
  auto whole = sliding_window_logits(net, imgs, d, {16, 16, 16}, 0.5);
  EXPECT_EQ(whole, net.forward(imgs, d).logits[0].value());
  auto tiled = sliding_window_logits(net, imgs, d, {8, 8, 8}, 0.5);
  EXPECT_EQ(tiled.shape(), (Shape{4, 16, 16, 16}));
  EXPECT_TRUE(tiled.all_finite());
}

TEST(Argmax, PicksLargestLogit) {
  Tensor<float> lg({4, 1, 1, 3}, std::vector<float>{0, 5, 1, 1, 0, 1, 2, 0, 1, 0, 0, 1});
  EXPECT_EQ(argmax_labels(lg).data, (std::vector<std::uint8_t>{2, 0, 0}));
}

TEST(ScenarioOrder, PublishedLayout) {
  auto order = table_scenario_order();
  ASSERT_EQ(order.size(), 15u);
  std::set<unsigned> uniq;
  for (auto d : order) uniq.insert(d.value());
  EXPECT_EQ(uniq.size(), 15u);
  // first rows are single modalities t2, tc, t1, fl; last is full
  EXPECT_EQ(order[0], ModalityIndicator::from_string("0010"));
  EXPECT_EQ(order[1], ModalityIndicator::from_string("0100"));
  EXPECT_EQ(order[2], ModalityIndicator::from_string("1000"));
  EXPECT_EQ(order[3], ModalityIndicator::from_string("0001"));
  EXPECT_TRUE(order.back().is_full());
}

std::vector<TrainingCase> phantom_cases(int n) {
  std::vector<TrainingCase> out;
  for (int i = 0; i < n; ++i) {
    auto rec = generate_phantom(PhantomSpec::randomized({16, 16, 16}, 100 + i));
    rec.case_id = "c" + std::to_string(i);
    out.push_back(TrainingCase::from_record(rec));
  }
  return out;
}

TEST(Scenarios, OracleSegmenterScoresOne) {
  auto cases = phantom_cases(3);
  Segmenter oracle = [](const TrainingCase& c, const ModalityIndicator&) { return c.labels; };
  EvalConfig cfg;
  cfg.postprocess = false;
  auto table = evaluate_scenarios(oracle, cases, cfg, {});
  ASSERT_EQ(table.rows.size(), 15u);
  EXPECT_EQ(table.row_count(), 16u);
  for (const auto& r : table.rows)
    for (double v : r.dsc) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : table.average) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Scenarios, RandomNetworkTableAndAverages) {
  auto cases = phantom_cases(2);
  SegmentationNet<float> net(ModelConfig::desk(), 5);
  EvalConfig cfg;
  auto table = evaluate_scenarios(network_segmenter(net, cfg, {16, 16, 16}), cases, cfg, {});
  ASSERT_EQ(table.rows.size(), 15u);
  std::array<double, 3> avg{};
  for (const auto& r : table.rows) {
    double check[3] = {0, 0, 0};
    for (const auto& c : r.cases)
      for (int j = 0; j < 3; ++j) check[j] += c.dsc[j] / 2.0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(r.dsc[j], 0.0);
      EXPECT_LE(r.dsc[j], 1.0);
      EXPECT_NEAR(r.dsc[j], check[j], 1e-12);
      avg[j] += r.dsc[j] / 15.0;
    }
  }
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(table.average[j], avg[j], 1e-9);

  // TSV: header + 15 rows + average
  std::istringstream is(table.to_tsv());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 17u);
  EXPECT_EQ(lines[0], "fl\tt1\ttc\tt2\tWT\tTC\tET");
  EXPECT_EQ(lines[1].substr(0, 7), "0\t0\t0\t1");
  EXPECT_EQ(lines[16].substr(0, 7), "Average");
  EXPECT_NE(table.to_text().find("\xE2\x80\xA2"), std::string::npos);
}

TEST(Scenarios, FullRowIgnoresRoutingOrder) {
  auto cases = phantom_cases(1);
  SegmentationNet<float> net(ModelConfig::desk(), 6);
  EvalConfig cfg;
  std::vector<ModalityIndicator> full{ModalityIndicator::full()};
  auto ref = evaluate_scenarios(network_segmenter(net, cfg, {16, 16, 16}), cases, cfg, full).rows[0].dsc;
  for (const auto& t : RelationshipTable::all_orders()) {
    net.set_rcr_order(t);
    EXPECT_EQ(evaluate_scenarios(network_segmenter(net, cfg, {16, 16, 16}), cases, cfg, full).rows[0].dsc, ref);
  }
}

TEST(Scenarios, EmptySplitRejected) {
  Segmenter oracle = [](const TrainingCase& c, const ModalityIndicator&) { return c.labels; };
  EXPECT_THROW(evaluate_scenarios(oracle, {}, EvalConfig{}, {}), DataError);
}

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

TEST(Efficiency, TableValues) {
  EfficiencyInput rf{6.01, 6.9, 162, 1.0};
  EfficiencyInput mm{0.72, 27, 58, 1.6};
  EXPECT_DOUBLE_EQ(round3(efficiency_factor(rf)), 0.071);
  EXPECT_DOUBLE_EQ(round3(efficiency_factor(mm)), 0.035);
  EfficiencyInput ours{4.10, 0.3, 176, 1.6};
  EXPECT_NEAR(efficiency_factor(ours), 4.10 / (0.5 * 0.3 + 0.5 * 176 / 4.096), 1e-12);
}

TEST(Efficiency, Errors) {
  EXPECT_THROW(efficiency_factor({1.0, 0.0, 0.0, 1.0}), NumericError);
  EXPECT_THROW(efficiency_factor({1.0, 1.0, 1.0, 0.0}), ContractViolation);
  EXPECT_THROW(efficiency_factor({1.0, -1.0, 1.0, 1.0}), ContractViolation);
}

}  // namespace
}  // namespace demoseg
