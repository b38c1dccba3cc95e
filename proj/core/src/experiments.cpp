// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "demoseg/error.hpp"
#include "demoseg/rng.hpp"

namespace demoseg {

GenDataResult generate_dataset(int n, const Extent3& shape, std::uint64_t seed, const std::filesystem::path& out,
                               bool force, const ModelConfig& model) {
  namespace fs = std::filesystem;
  if (n < 1) throw ContractViolation("gen-data needs at least one case");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw DataError("output directory " + out.string() + " is not empty (use --force)");
    fs::remove_all(out / "cases");
    fs::remove(out / "manifest.json");
  }
  GenDataResult res;
  const int div = model.spatial_divisor();
  if (shape.d % div || shape.h % div || shape.w % div) {
    res.warnings.push_back("shape " + std::to_string(shape.d) + "x" + std::to_string(shape.h) + "x" +
                           std::to_string(shape.w) + " is not divisible by 2^(scales-1) = " + std::to_string(div) +
                           "; the backbone needs every sliding window divisible by it");
  }
  fs::create_directories(out / "cases");
  Rng root(seed);
  std::vector<std::string> paths;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%03d", i);
    const std::uint64_t case_seed = root.split(static_cast<std::uint64_t>(i)).next_u64();
    CaseRecord rec = generate_phantom(PhantomSpec::randomized(shape, case_seed));
    rec.case_id = name;
    const std::string rel = std::string("cases/") + name;
    save_case(rec, out / rel);
    paths.push_back(rel);
  }
  res.manifest = partition_cases(paths, seed);
  res.manifest.base = out;
  res.manifest_path = out / "manifest.json";
  save_manifest(res.manifest, res.manifest_path);
  return res;
}

AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "components") return AblationKind::components;
  if (s == "rcr-order" || s == "rcr_order") return AblationKind::rcr_order;
  if (s == "kd-placement" || s == "kd_placement") return AblationKind::kd_placement;
  throw ContractViolation("unknown ablation kind '" + s + "' (components, rcr-order, kd-placement)");
}

std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::components: return "components";
    case AblationKind::rcr_order: return "rcr-order";
    case AblationKind::kd_placement: return "kd-placement";
  }
  return "?";
}

std::vector<std::string> ablation_columns(AblationKind kind) {
  switch (kind) {
    case AblationKind::components: return {"FD", "CSSA", "RCR"};
    case AblationKind::rcr_order: return {"Compensation Order"};
    case AblationKind::kd_placement: return {"Constraint"};
  }
  return {};
}

std::vector<AblationVariant> ablation_variants(AblationKind kind, const RunConfig& base) {
  std::vector<AblationVariant> out;
  switch (kind) {
    case AblationKind::components: {
      static constexpr std::array<std::array<bool, 3>, 8> rows{{{false, false, false},
                                                                {true, false, false},
                                                                {false, true, false},
                                                                {false, false, true},
                                                                {false, true, true},
                                                                {true, false, true},
                                                                {true, true, false},
                                                                {true, true, true}}};
      for (const auto& r : rows) {
        RunConfig c = base;
        c.model.feature_decoupling = r[0];
        c.model.use_cssa = r[1];
        c.model.use_rcr = r[2];
        out.push_back({{r[0] ? "yes" : "no", r[1] ? "yes" : "no", r[2] ? "yes" : "no"}, c});
      }
      break;
    }
    case AblationKind::rcr_order: {
      for (const char* order : {"III,II,I", "III,I,II", "II,III,I", "II,I,III", "I,III,II", "I,II,III"}) {
        RunConfig c = base;
        c.model.rcr_order = RelationshipTable::parse(order);
        std::string label = order;
        for (std::size_t p = label.find(','); p != std::string::npos; p = label.find(',')) label.replace(p, 1, "->");
        out.push_back({{label}, c});
      }
      break;
    }
    case AblationKind::kd_placement: {
      const std::array<std::pair<KdPlacement, const char*>, 3> rows{{{KdPlacement::none, "w/o L_kd"},
                                                                      {KdPlacement::after_cssa, "w/ L_kd, after CSSA"},
                                                                      {KdPlacement::before_cssa, "w/ L_kd, before CSSA"}}};
      for (const auto& [p, label] : rows) {
        RunConfig c = base;
        c.loss.kd_placement = p;
        out.push_back({{label}, c});
      }
      break;
    }
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string AblationReport::to_tsv() const {
  std::ostringstream os;
  for (const auto& c : columns) os << c << '\t';
  os << "WT\tTC\tET\n";
  for (const auto& r : rows) {
    for (const auto& s : r.settings) os << s << '\t';
    os << fmt(r.dsc[0]) << '\t' << fmt(r.dsc[1]) << '\t' << fmt(r.dsc[2]) << '\n';
  }
  return os.str();
}

std::string AblationReport::to_text() const {
  std::vector<std::size_t> width;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    std::size_t w = columns[j].size();
    for (const auto& r : rows) w = std::max(w, r.settings[j].size());
    width.push_back(w);
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  std::ostringstream os;
  for (std::size_t j = 0; j < columns.size(); ++j) os << pad(columns[j], width[j]) << "  ";
  os << "|     WT      TC      ET\n";
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < columns.size(); ++j) os << pad(r.settings[j], width[j]) << "  ";
    os << "| " << fmt(r.dsc[0]) << "  " << fmt(r.dsc[1]) << "  " << fmt(r.dsc[2]) << '\n';
  }
  return os.str();
}

AblationReport run_ablation(AblationKind kind, const std::vector<TrainingCase>& train_cases,
                            const std::vector<TrainingCase>& test_cases, const RunConfig& base,
                            const AblationOptions& opt) {
  if (test_cases.empty()) throw DataError("ablation needs a non-empty test split");
  AblationReport rep;
  rep.kind = kind;
  rep.columns = ablation_columns(kind);
  const auto variants = ablation_variants(kind, base);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto& var = variants[v];
    if (opt.progress) {
      std::string s = to_string(kind) + " variant " + std::to_string(v + 1) + "/" + std::to_string(variants.size());
      for (const auto& x : var.settings) s += " " + x;
      opt.progress(s);
    }
    TrainOptions to;
    if (opt.out_dir) to.out_dir = *opt.out_dir / ("variant_" + std::to_string(v));
    const TrainResult tr = train(train_cases, var.config, to);
    SegmentationNet<float> net(var.config.model, tr.checkpoint.params.cast<float>());
    const ScenarioTable table =
        evaluate_scenarios(network_segmenter(net, var.config.eval, var.config.train.patch), test_cases,
                           var.config.eval, opt.scenarios);
    if (opt.out_dir) {
      std::ofstream os(*opt.out_dir / ("variant_" + std::to_string(v)) / "table.tsv", std::ios::trunc);
      os << table.to_tsv();
    }
    AblationRow row{var.settings, table.average, tr.log.empty() ? 0.0 : tr.log.back().total};
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace demoseg
