// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion followed by the
// individual checks. Exit status is 0 when every check passes, except checks
// listed as known deviations (see README); --strict counts those as well.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "demoseg/cssa.hpp"
#include "demoseg/evaluator.hpp"
#include "demoseg/experiments.hpp"
#include "demoseg/gradcheck.hpp"
#include "demoseg/losses.hpp"
#include "demoseg/rcr.hpp"
#include "demoseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace demoseg;

namespace {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
  bool known_deviation = false;
};

struct Criterion {
  int id = 0;
  std::string title;
  std::vector<Check> checks;
  double seconds = 0;
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void progress(const std::string& s) { std::cerr << ".. " << s << std::endl; }

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

// ---------------------------------------------------------------------------

void efficiency(Criterion& c) {
  struct Row {
    const char* name;
    EfficiencyInput in;
    double expected;
    bool known;
  };
  const Row rows[] = {
      {"RFNet", {6.01, 6.9, 162, 1.0}, 0.071, false},
      {"mmFormer", {0.72, 27, 58, 1.6}, 0.035, false},
      // 4.10 / (0.15 + 88 / 4.096) = 0.18951, which rounds to 0.190
      {"DeMoSeg", {4.10, 0.3, 176, 1.6}, 0.189, true},
  };
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& r : rows) {
    const double p = efficiency_factor(r.in);
    c.checks.push_back({std::string(r.name) + " P", round3(p) == r.expected,
                        "computed " + fmt(p, 5) + " -> " + fmt(round3(p), 3) + ", reference " + fmt(r.expected, 3),
                        r.known});
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.checks.push_back({"runtime < 1 s", dt < 1.0, fmt(dt, 6) + " s"});
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd dense_of(const PermutationPlan& plan) {
  const auto d = plan.dense();
  const auto n = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = d[i][j];
  return m;
}

void permutation_suite(Criterion& c) {
  auto t0 = std::chrono::steady_clock::now();
  constexpr int kC1 = 32;
  Rng rng(20260);
  int bad_perm = 0, bad_gather = 0, bad_order = 0;
  double worst = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> s(kC1);
    for (auto& v : s) v = rng.normal();
    if (trial % 4 == 0) s[rng.below(kC1)] = s[rng.below(kC1)];
    const auto plan = permutation_from_scores(s);
    const auto p = dense_of(plan);
    const bool ok = (p.rowwise().sum().array() == 1.0).all() && (p.colwise().sum().array() == 1.0).all() &&
                    std::abs(std::abs(p.fullPivLu().determinant()) - 1.0) < 1e-12;
    bad_perm += !ok;
    for (int i = 0; i + 1 < kC1; ++i) {
      const auto a = plan.order[i], b = plan.order[i + 1];
      if (!(s[a] > s[b] || (s[a] == s[b] && a < b))) {
        ++bad_order;
        break;
      }
    }
    Tensor<double> x({kC1, 2, 2, 2});
    for (auto& v : x.storage()) v = rng.normal();
    const auto g = ops::channel_gather(Var<double>::constant(x), plan.order).value();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> xm(x.data(), kC1, 8);
    const Eigen::MatrixXd px = p * xm;
    double err = 0;
    for (int r = 0; r < kC1; ++r)
      for (int k = 0; k < 8; ++k) err = std::max(err, std::abs(g[r * 8 + k] - px(r, k)));
    worst = std::max(worst, err);
    bad_gather += err > 1e-12;
  }
  c.checks.push_back({"10^4 score vectors give permutation matrices", bad_perm == 0,
                      std::to_string(bad_perm) + " failures (row/col sums, |det|)"});
  c.checks.push_back({"descending order, ties to lower index", bad_order == 0, std::to_string(bad_order) + " failures"});
  c.checks.push_back({"gather equals dense P X", bad_gather == 0, "max abs error " + std::to_string(worst)});

  std::vector<double> sorted(kC1), tied(kC1, 0.25);
  for (int i = 0; i < kC1; ++i) sorted[i] = 1.0 - 0.01 * i;
  c.checks.push_back({"sorted scores give identity", dense_of(permutation_from_scores(sorted)).isIdentity(), ""});
  c.checks.push_back({"tied scores give identity", dense_of(permutation_from_scores(tied)).isIdentity(), ""});
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.checks.push_back({"runtime < 30 s", dt < 30.0, fmt(dt, 3) + " s"});
}

// ---------------------------------------------------------------------------

void routing_oracle(Criterion& c) {
  auto t0 = std::chrono::steady_clock::now();
  // partners of t1, tc, t2, fl under pairings I, II, III
  constexpr int kPartner[3][4] = {{1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
  int cases = 0, mismatches = 0;
  for (const auto& table : RelationshipTable::all_orders()) {
    for (const auto& d : enumerate_scenarios()) {
      const auto prov = route(d, table);
      for (int slot = 0; slot < 4; ++slot) {
        const bool here = (d.value() >> (3 - slot)) & 1U;
        int src = slot;
        if (!here) {
          src = -1;
          for (auto p : table.order()) {
            const int cand = kPartner[static_cast<int>(p)][slot];
            if ((d.value() >> (3 - cand)) & 1U) {
              src = cand;
              break;
            }
          }
        }
        const SlotSource want{static_cast<Modality>(slot), static_cast<Modality>(src), here};
        mismatches += !(prov[slot] == want);
      }
      ++cases;
    }
  }
  c.checks.push_back({"15 x 6 routings match brute force", cases == 90 && mismatches == 0,
                      std::to_string(cases) + " cases, " + std::to_string(mismatches) + " slot mismatches"});

  auto render = [](const Provenance& p) {
    std::string s;
    for (const auto& x : p) s += (s.empty() ? "" : " | ") + x.to_string();
    return s;
  };
  const auto full = render(route(ModalityIndicator::full(), RelationshipTable{}));
  c.checks.push_back({"full modality routing", full == "s_t1 | s_tc | s_t2 | s_fl", full});
  const auto missing = render(route(ModalityIndicator::from_string("0011"), RelationshipTable{}));
  c.checks.push_back({"t1, tc missing routing", missing == "u_{t2->t1} | u_{fl->tc} | s_t2 | s_fl", missing});
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.checks.push_back({"runtime < 5 s", dt < 5.0, fmt(dt, 3) + " s"});
}

// ---------------------------------------------------------------------------

void gradient_suite(Criterion& c) {
  const std::clock_t t0 = std::clock();
  GradSuiteOptions opt;
  opt.seeds = 20;
  const auto reports = run_gradient_suite(opt);
  const std::set<std::string> required{"conv3d_k3_s1",    "conv3d_k3_s2", "conv3d_k1",     "conv_transpose3d",
                                       "instance_norm",   "leaky_relu",   "sigmoid",       "log",
                                       "global_avg_pool", "linear",       "softmax_axis0", "concat",
                                       "add",             "mul",          "channel_gather", "avg_pool2",
                                       "cssa_forward",    "dice_ce_loss", "kd_loss"};
  std::set<std::string> seen;
  for (const auto& r : reports) {
    seen.insert(r.op);
    c.checks.push_back({r.op, r.pass && r.max_rel_error <= 1e-4 && r.trials >= 20,
                        "max rel error " + std::to_string(r.max_rel_error) + " over " + std::to_string(r.trials) +
                            " seeds"});
  }
  std::string missing;
  for (const auto& r : required)
    if (!seen.count(r)) missing += " " + r;
  c.checks.push_back({"suite covers every primitive and both losses", missing.empty(),
                      missing.empty() ? std::to_string(reports.size()) + " cases" : "missing:" + missing});
  const double cpu = double(std::clock() - t0) / CLOCKS_PER_SEC;
  c.checks.push_back({"CPU time < 10 min", cpu < 600, fmt(cpu, 1) + " s"});
}

// ---------------------------------------------------------------------------

void loss_identities(Criterion& c) {
  using V = Var<double>;
  std::array<std::optional<DecoupledFeatures<double>>, kNumModalities> fs;
  Rng rng(3);
  Tensor<double> x({8, 3, 3, 3});
  for (auto& v : x.storage()) v = rng.normal();
  for (auto m : kModalities) {
    DecoupledFeatures<double> f;
    f.modality = m;
    f.sub_channels = 8;
    f.self_pre = f.self_post = V::constant(x);
    for (auto l : others(m)) f.mutual_pre[index_of(l)] = f.mutual_post[index_of(l)] = V::constant(x);
    fs[index_of(m)] = f;
  }
  const double kd0 = kd_loss(fs, 1.0).value()[0];
  c.checks.push_back({"kd_loss on identical sub-spaces", std::abs(kd0) < 1e-12, "value " + std::to_string(kd0)});

  Tensor<double> s({2, 1, 1, 1}, std::vector<double>{0.0, 0.0});
  Tensor<double> u({2, 1, 1, 1}, std::vector<double>{std::log(3.0), 0.0});
  const double kd1 = channel_kl(V::constant(u), V::constant(s), 1.0).value()[0];
  c.checks.push_back({"two-channel KL", std::abs(kd1 - 0.13081) <= 1e-5, "value " + fmt(kd1, 6) + ", reference 0.13081"});

  std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0};
  Tensor<double> perfect({4, 2, 2, 2}, -1000.0);
  for (int i = 0; i < 8; ++i) perfect[labels[i] * 8 + i] = 0.0;
  const double d0 = dice_ce_loss(V::constant(perfect), labels, 0.0).value()[0];
  c.checks.push_back({"dice_ce on perfect one-hot (eps 0)", d0 == 0.0, "value " + std::to_string(d0)});

  const double d1 =
      dice_ce_loss(V::constant(Tensor<double>({2, 1, 1, 1}, 0.0)), std::vector<std::uint8_t>{0}, 0.0).value()[0];
  c.checks.push_back({"dice_ce K=2 hand case", std::abs(d1 - 1.3598) <= 1e-4, "value " + fmt(d1, 6) + ", reference 1.3598"});
}

// ---------------------------------------------------------------------------

struct Workspace {
  fs::path root;
  std::string cli;
  std::optional<DatasetManifest> manifest;
  std::map<std::uint64_t, ScenarioTable> tables;
  std::map<std::uint64_t, std::vector<IterationLog>> logs;
  std::map<std::uint64_t, double> cpu_seconds;

  const DatasetManifest& dataset() {
    if (!manifest) {
      progress("generating 10 phantom cases (32^3)");
      auto r = generate_dataset(10, {32, 32, 32}, 1, root / "data", true);
      manifest = r.manifest;
    }
    return *manifest;
  }

  static RunConfig desk_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.train.epochs = 40;
    cfg.train.iters_per_epoch = 25;
    cfg.train.batch_size = 2;
    cfg.train.patch = {16, 16, 16};
    cfg.train.seed = seed;
    return cfg;
  }

  const ScenarioTable& trained(std::uint64_t seed) {
    if (auto it = tables.find(seed); it != tables.end()) return it->second;
    const auto& m = dataset();
    const RunConfig cfg = desk_config(seed);
    TrainOptions opt;
    opt.out_dir = root / ("train_seed" + std::to_string(seed));
    opt.on_iteration = [seed, total = cfg.train.total_iters()](const IterationLog& l) {
      if ((l.iter + 1) % 100 == 0)
        progress("seed " + std::to_string(seed) + " iteration " + std::to_string(l.iter + 1) + "/" +
                 std::to_string(total) + " L_total " + fmt(l.total));
    };
    const std::clock_t t0 = std::clock();
    auto res = train(m, cfg, opt);
    cpu_seconds[seed] = double(std::clock() - t0) / CLOCKS_PER_SEC;
    logs[seed] = res.log;
    progress("evaluating seed " + std::to_string(seed) + " over 15 scenarios");
    auto table = evaluate_scenarios(res.checkpoint, m, cfg.eval);
    std::ofstream(*opt.out_dir / "table.txt") << table.to_text();
    return tables.emplace(seed, std::move(table)).first->second;
  }
};

void end_to_end(Criterion& c, Workspace& ws) {
  const auto& m = ws.dataset();
  c.checks.push_back({"10 cases split 7/1/2", m.train.size() == 7 && m.val.size() == 1 && m.test.size() == 2,
                      std::to_string(m.train.size()) + "/" + std::to_string(m.val.size()) + "/" +
                          std::to_string(m.test.size())});
  const auto& table = ws.trained(0);
  const auto& log = ws.logs[0];
  const RunConfig cfg = Workspace::desk_config(0);
  c.checks.push_back({"iterations <= 2000", cfg.train.total_iters() <= 2000 && log.size() <= 2000,
                      std::to_string(log.size()) + " iterations, patch 16^3, batch 2"});
  c.checks.push_back({"training CPU time <= 30 min", ws.cpu_seconds[0] <= 1800, fmt(ws.cpu_seconds[0], 1) + " s"});
  const auto& full = table.row(ModalityIndicator::full());
  c.checks.push_back({"full-modality WT >= 0.85", full.dsc[0] >= 0.85, fmt(full.dsc[0])});
  c.checks.push_back({"full-modality TC >= 0.70", full.dsc[1] >= 0.70, fmt(full.dsc[1])});
  double worst = 1.0;
  std::string worst_delta;
  for (const auto& r : table.rows)
    if (r.dsc[0] < worst) {
      worst = r.dsc[0];
      worst_delta = r.delta.to_string();
    }
  c.checks.push_back({"every scenario WT >= 0.60", worst >= 0.60, "lowest " + fmt(worst) + " at " + worst_delta});
  const std::size_t w = 50;
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < w; ++i) {
    head += log[i].total / w;
    tail += log[log.size() - w + i].total / w;
  }
  c.checks.push_back({"final-window mean L_total < first-window mean", tail < head,
                      "first 50: " + fmt(head) + ", last 50: " + fmt(tail)});
  std::cout << table.to_text();
}

void ordering_property(Criterion& c, Workspace& ws) {
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  std::map<unsigned, double> mean;
  for (auto s : seeds) {
    const auto& t = ws.trained(s);
    for (const auto& r : t.rows) mean[r.delta.value()] += r.dsc[0] / static_cast<double>(seeds.size());
  }
  const double full = mean[15];
  for (unsigned single : {8u, 4u, 2u, 1u}) {
    const auto d = ModalityIndicator::from_value(single);
    std::string who;
    for (auto mo : d.available_modalities()) who = std::string(name_of(mo));
    c.checks.push_back({who + " only <= full (WT, 3-seed mean)", mean[single] <= full,
                        fmt(mean[single]) + " vs " + fmt(full)});
  }
}

// ---------------------------------------------------------------------------

struct CmdResult {
  int status = -1;
  std::string output;
};

CmdResult sh(const std::string& cmd) {
  CmdResult r;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void determinism(Criterion& c, Workspace& ws) {
  const auto& m = ws.dataset();
  const fs::path manifest = m.base / "manifest.json";
  const fs::path dir = ws.root / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg;
  cfg.train.epochs = 3;
  cfg.train.iters_per_epoch = 4;
  cfg.train.patch = {16, 16, 16};
  cfg.train.seed = 11;
  save_run_config(cfg, dir / "cfg.json");
  const std::string base = ws.cli + " train --quiet --manifest " + manifest.string() + " --config " +
                           (dir / "cfg.json").string();
  const auto a = sh(base + " --out " + (dir / "a").string());
  const auto b = sh(base + " --out " + (dir / "b").string());
  c.checks.push_back({"both runs succeed", a.status == 0 && b.status == 0,
                      a.status == 0 && b.status == 0 ? "" : a.output + b.output});
  const auto ma = slurp(dir / "a" / "metrics.jsonl");
  c.checks.push_back({"identical metrics.jsonl", !ma.empty() && ma == slurp(dir / "b" / "metrics.jsonl"),
                      std::to_string(std::count(ma.begin(), ma.end(), '\n')) + " lines"});
  c.checks.push_back({"identical checkpoints",
                      slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"), ""});

  const auto r1 = sh(base + " --stop-after-epoch 1 --out " + (dir / "r").string());
  const auto r2 = sh(base + " --resume " + (dir / "r" / "checkpoint.bin").string() + " --out " + (dir / "r").string());
  c.checks.push_back({"interrupted run and resume succeed", r1.status == 0 && r2.status == 0,
                      r1.status == 0 && r2.status == 0 ? "" : r1.output + r2.output});
  c.checks.push_back({"resumed loss trace equals uninterrupted", ma == slurp(dir / "r" / "metrics.jsonl"), ""});
  c.checks.push_back({"resumed checkpoint equals uninterrupted",
                      slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "r" / "checkpoint.bin"), ""});
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(slurp(p));
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void ablation_layouts(Criterion& c, Workspace& ws) {
  const auto& m = ws.dataset();
  const fs::path dir = ws.root / "ablation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg;
  cfg.train.epochs = 1;
  cfg.train.iters_per_epoch = 4;
  cfg.train.batch_size = 1;
  cfg.train.patch = {16, 16, 16};
  save_run_config(cfg, dir / "cfg.json");

  struct Kind {
    const char* name;
    std::size_t rows;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> settings;
  };
  const std::vector<Kind> kinds{
      {"components",
       8,
       {"FD", "CSSA", "RCR"},
       {{"no", "no", "no"},
        {"yes", "no", "no"},
        {"no", "yes", "no"},
        {"no", "no", "yes"},
        {"no", "yes", "yes"},
        {"yes", "no", "yes"},
        {"yes", "yes", "no"},
        {"yes", "yes", "yes"}}},
      {"rcr-order",
       6,
       {"Compensation Order"},
       {{"III->II->I"}, {"III->I->II"}, {"II->III->I"}, {"II->I->III"}, {"I->III->II"}, {"I->II->III"}}},
      {"kd-placement", 3, {"Constraint"}, {{"w/o L_kd"}, {"w/ L_kd, after CSSA"}, {"w/ L_kd, before CSSA"}}},
  };
  for (const auto& k : kinds) {
    progress(std::string("ablate ") + k.name);
    const fs::path out = dir / k.name;
    const auto r = sh(ws.cli + " ablate --kind " + k.name + " --manifest " + (m.base / "manifest.json").string() +
                      " --config " + (dir / "cfg.json").string() + " --scenario 1111 --scenario 0011 --out " +
                      out.string());
    if (r.status != 0) {
      c.checks.push_back({std::string(k.name) + " runs", false, r.output});
      continue;
    }
    const auto tsv = read_tsv(out / "table.tsv");
    auto header = k.columns;
    header.insert(header.end(), {"WT", "TC", "ET"});
    bool cells_ok = tsv.size() == k.rows + 1;
    for (std::size_t i = 1; cells_ok && i < tsv.size(); ++i) {
      const auto& row = tsv[i];
      cells_ok = row.size() == header.size() &&
                 std::equal(k.settings[i - 1].begin(), k.settings[i - 1].end(), row.begin());
      for (std::size_t j = k.columns.size(); cells_ok && j < row.size(); ++j) {
        const double v = std::stod(row[j]);
        cells_ok = v >= 0.0 && v <= 1.0;
      }
    }
    c.checks.push_back({std::string(k.name) + ": " + std::to_string(k.rows) + " rows with WT/TC/ET",
                        !tsv.empty() && tsv[0] == header && cells_ok,
                        std::to_string(tsv.empty() ? 0 : tsv.size() - 1) + " rows"});
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "demoseg_acceptance").string();
  std::string cli = DEMOSEG_CLI_PATH;
  std::vector<int> only;
  bool strict = false;
  app.add_option("--workdir", workdir, "Scratch directory (recreated)");
  app.add_option("--cli", cli, "Path of the demoseg executable");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("--strict", strict, "Known deviations also fail the run");
  CLI11_PARSE(app, argc, argv);

  Workspace ws;
  ws.root = workdir;
  ws.cli = cli;
  fs::remove_all(ws.root);
  fs::create_directories(ws.root);

  const std::vector<std::pair<std::string, std::function<void(Criterion&)>>> all{
      {"efficiency factor reference values", efficiency},
      {"channel permutation suite", permutation_suite},
      {"compensation routing oracle", routing_oracle},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"end-to-end desk training", [&](Criterion& c) { end_to_end(c, ws); }},
      {"missing-modality ordering over 3 seeds", [&](Criterion& c) { ordering_property(c, ws); }},
      {"training determinism and resume", [&](Criterion& c) { determinism(c, ws); }},
      {"ablation table layouts", [&](Criterion& c) { ablation_layouts(c, ws); }},
  };

  std::vector<Criterion> results;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Criterion c{id, all[i].first, {}, 0};
    progress("criterion " + std::to_string(id) + ": " + c.title);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      all[i].second(c);
    } catch (const std::exception& ex) {
      c.checks.push_back({"completed without error", false, ex.what()});
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << " " << (c.pass() ? "PASS" : "FAIL") << "  " << c.title << " ("
              << fmt(c.seconds, 1) << " s)\n";
    for (const auto& ch : c.checks) {
      std::cout << "    [" << (ch.pass ? "ok" : (ch.known_deviation ? "known deviation" : "x")) << "] " << ch.name;
      if (!ch.detail.empty()) std::cout << ": " << ch.detail;
      std::cout << "\n";
    }
    std::cout.flush();
    results.push_back(std::move(c));
  }

  int failed = 0, known = 0;
  for (const auto& c : results)
    for (const auto& ch : c.checks) {
      if (ch.pass) continue;
      if (ch.known_deviation) ++known;
      else ++failed;
    }
  const auto passed = std::count_if(results.begin(), results.end(), [](const Criterion& c) { return c.pass(); });
  std::cout << "summary: " << passed << "/" << results.size() << " criteria pass; " << failed
            << " unexpected failing checks, " << known << " known deviations\n";
  if (failed > 0) return 1;
  if (strict && known > 0) return 1;
  return 0;
}
