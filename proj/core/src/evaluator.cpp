// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "demoseg/error.hpp"

namespace demoseg {

std::string_view name_of(Region r) {
  switch (r) {
    case Region::WT: return "WT";
    case Region::TC: return "TC";
    case Region::ET: return "ET";
  }
  return "?";
}

Mask region_mask(const LabelVolume& labels, Region r) {
  Mask m(labels.extent, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels.data[i];
    bool in = false;
    switch (r) {
      case Region::WT: in = l == kNecrotic || l == kEdema || l == kEnhancing; break;
      case Region::TC: in = l == kNecrotic || l == kEnhancing; break;
      case Region::ET: in = l == kEnhancing; break;
    }
    m.data[i] = in ? 1 : 0;
  }
  return m;
}

double dsc(const Mask& a, const Mask& b, double both_empty) {
  if (a.extent != b.extent || a.size() != b.size()) throw ShapeError("dsc: mask shapes differ");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return both_empty;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

LabelVolume postprocess_et(LabelVolume labels, double threshold) {
  const auto et = std::count(labels.data.begin(), labels.data.end(), kEnhancing);
  if (et > 0 && static_cast<double>(et) < threshold) std::replace(labels.data.begin(), labels.data.end(),
                                                                  std::uint8_t{kEnhancing}, std::uint8_t{kNecrotic});
  return labels;
}

RegionScores region_dsc(const LabelVolume& pred, const LabelVolume& truth, double both_empty) {
  RegionScores s{};
  for (Region r : kRegions)
    s[static_cast<std::size_t>(r)] = dsc(region_mask(pred, r), region_mask(truth, r), both_empty);
  return s;
}

// ------------------------------------------------------------------ windows

std::vector<std::int64_t> window_starts(std::int64_t size, std::int64_t window, double overlap) {
  if (window <= 0 || size <= 0) throw ContractViolation("window and volume sizes must be positive");
  if (window >= size) return {0};
  const auto stride = std::max<std::int64_t>(1, std::llround(double(window) * (1.0 - overlap)));
  std::vector<std::int64_t> out;
  for (std::int64_t s = 0; s + window < size; s += stride) out.push_back(s);
  out.push_back(size - window);
  return out;
}

Tensor<float> sliding_window_logits(const SegmentationNet<float>& net, const ModalityImages<float>& images,
                                    const ModalityIndicator& delta, const Extent3& window, double overlap) {
  Extent3 e{};
  for (Modality m : delta.available_modalities()) e = spatial_extent(images[index_of(m)].shape());
  const Extent3 w{std::min(window.d, e.d), std::min(window.h, e.h), std::min(window.w, e.w)};
  const int k = net.config().num_classes;
  Tensor<float> acc(Shape{k, e.d, e.h, e.w});
  std::vector<float> hits(static_cast<std::size_t>(e.voxels()), 0.0f);
  const auto n = static_cast<std::size_t>(e.voxels());
  for (auto d0 : window_starts(e.d, w.d, overlap)) {
    for (auto h0 : window_starts(e.h, w.h, overlap)) {
      for (auto w0 : window_starts(e.w, w.w, overlap)) {
        ModalityImages<float> patch;
        for (Modality m : delta.available_modalities()) {
          const auto& src = images[index_of(m)];
          Tensor<float> t(Shape{1, w.d, w.h, w.w});
          for (std::int64_t d = 0; d < w.d; ++d)
            for (std::int64_t h = 0; h < w.h; ++h)
              std::copy_n(src.data() + ((d0 + d) * e.h + h0 + h) * e.w + w0, w.w, t.data() + (d * w.h + h) * w.w);
          patch[index_of(m)] = std::move(t);
        }
        const auto out = net.forward(patch, delta);
        const auto& lg = out.logits.at(0).value();
        const auto wn = static_cast<std::size_t>(w.voxels());
        for (std::int64_t d = 0; d < w.d; ++d) {
          for (std::int64_t h = 0; h < w.h; ++h) {
            for (std::int64_t x = 0; x < w.w; ++x) {
              const auto dst = static_cast<std::size_t>(((d0 + d) * e.h + h0 + h) * e.w + w0 + x);
              const auto src = static_cast<std::size_t>((d * w.h + h) * w.w + x);
              for (int c = 0; c < k; ++c) acc[static_cast<std::size_t>(c) * n + dst] += lg[static_cast<std::size_t>(c) * wn + src];
              hits[dst] += 1.0f;
            }
          }
        }
      }
    }
  }
  for (int c = 0; c < k; ++c)
    for (std::size_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(c) * n + i] /= hits[i];
  return acc;
}

LabelVolume argmax_labels(const Tensor<float>& logits) {
  const Extent3 e = spatial_extent(logits.shape());
  const auto k = logits.dim(0);
  const auto n = static_cast<std::size_t>(e.voxels());
  LabelVolume out(e, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < k; ++c) {
      if (logits[static_cast<std::size_t>(c) * n + i] > logits[static_cast<std::size_t>(best) * n + i]) best = c;
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ------------------------------------------------------------------- tables

void ScenarioTable::finalize() {
  average = {0, 0, 0};
  if (rows.empty()) return;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < 3; ++j) average[j] += r.dsc[j];
  for (auto& v : average) v /= static_cast<double>(rows.size());
}

const ScenarioRow& ScenarioTable::row(const ModalityIndicator& delta) const {
  for (const auto& r : rows) {
    if (r.delta == delta) return r;
  }
  throw ContractViolation("scenario " + delta.to_string() + " not in table");
}

namespace {

constexpr std::array<Modality, 4> kTableColumns{Modality::fl, Modality::t1, Modality::tc, Modality::t2};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string ScenarioTable::to_tsv() const {
  std::ostringstream os;
  os << "fl\tt1\ttc\tt2\tWT\tTC\tET\n";
  for (const auto& r : rows) {
    for (Modality m : kTableColumns) os << (r.delta.available(m) ? '1' : '0') << '\t';
    os << fmt(r.dsc[0]) << '\t' << fmt(r.dsc[1]) << '\t' << fmt(r.dsc[2]) << '\n';
  }
  os << "Average\t\t\t\t" << fmt(average[0]) << '\t' << fmt(average[1]) << '\t' << fmt(average[2]) << '\n';
  return os.str();
}

std::string ScenarioTable::to_text() const {
  std::ostringstream os;
  os << "fl  t1  tc  t2 |     WT      TC      ET\n";
  os << "---------------+------------------------\n";
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < 4; ++j) os << (r.delta.available(kTableColumns[j]) ? "•" : "◦") << (j < 3 ? "   " : "  ");
    os << "| " << fmt(r.dsc[0]) << "  " << fmt(r.dsc[1]) << "  " << fmt(r.dsc[2]) << '\n';
  }
  os << "---------------+------------------------\n";
  os << "Average        | " << fmt(average[0]) << "  " << fmt(average[1]) << "  " << fmt(average[2]) << '\n';
  return os.str();
}

std::vector<ModalityIndicator> table_scenario_order() {
  // fl t1 tc t2 marks, as printed.
  static constexpr std::array<const char*, 15> rows{"0001", "0010", "0100", "1000", "0011", "0110", "1100", "0101",
                                                   "1001", "1010", "1110", "1101", "1011", "0111", "1111"};
  std::vector<ModalityIndicator> out;
  for (const char* r : rows) {
    std::array<bool, kNumModalities> flags{};
    for (std::size_t j = 0; j < 4; ++j) flags[index_of(kTableColumns[j])] = r[j] == '1';
    out.push_back(ModalityIndicator::from_flags(flags));
  }
  return out;
}

ScenarioTable evaluate_scenarios(const Segmenter& segmenter, const std::vector<TrainingCase>& cases,
                                 const EvalConfig& cfg, const std::vector<ModalityIndicator>& scenarios) {
  if (cases.empty()) throw DataError("evaluation split is empty");
  ScenarioTable table;
  for (const auto& delta : scenarios.empty() ? table_scenario_order() : scenarios) {
    ScenarioRow row;
    row.delta = delta;
    row.dsc = {0, 0, 0};
    for (const auto& c : cases) {
      LabelVolume pred = segmenter(c, delta);
      if (pred.extent != c.labels.extent) throw ShapeError("segmenter output shape differs from labels");
      if (cfg.postprocess) pred = postprocess_et(std::move(pred), cfg.et_threshold_for(c.labels.extent.voxels()));
      DSCReport rep{c.case_id, delta, region_dsc(pred, c.labels, cfg.both_empty_dsc)};
      for (std::size_t j = 0; j < 3; ++j) row.dsc[j] += rep.dsc[j] / static_cast<double>(cases.size());
      row.cases.push_back(std::move(rep));
    }
    table.rows.push_back(std::move(row));
  }
  table.finalize();
  return table;
}

Segmenter network_segmenter(const SegmentationNet<float>& net, const EvalConfig& cfg, const Extent3& train_patch) {
  auto frozen = std::make_shared<SegmentationNet<float>>(net.config(), net.params().cast<float>());
  frozen->params().set_trainable(false);
  const Extent3 window = cfg.window.voxels() > 0 ? cfg.window : train_patch;
  const double overlap = cfg.overlap;
  return [frozen, window, overlap](const TrainingCase& c, const ModalityIndicator& delta) {
    return argmax_labels(sliding_window_logits(*frozen, c.images, delta, window, overlap));
  };
}

ScenarioTable evaluate_scenarios(const Checkpoint& checkpoint, const DatasetManifest& manifest, const EvalConfig& cfg,
                                 std::optional<RelationshipTable> rcr_order, std::vector<ModalityIndicator> scenarios) {
  const auto cases = load_training_cases(manifest, "test");
  if (cases.empty()) throw DataError("manifest test split is empty");
  SegmentationNet<float> net(checkpoint.config.model, checkpoint.params.cast<float>());
  if (rcr_order) net.set_rcr_order(*rcr_order);
  return evaluate_scenarios(network_segmenter(net, cfg, checkpoint.config.train.patch), cases, cfg, scenarios);
}

double efficiency_factor(const EfficiencyInput& in) {
  if (in.param_m < 0 || in.flops_g < 0) throw ContractViolation("Param and FLOPs must be >= 0");
  if (!(in.eta > 0)) throw ContractViolation("eta must be > 0");
  const double den = in.lambda * in.param_m + in.mu * in.flops_g / (in.eta * in.eta * in.eta);
  if (!(den > 0)) throw NumericError("efficiency factor denominator is not positive");
  return in.delta_dsc / den;
}

}  // namespace demoseg
