// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// demoseg <command> [flags]
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demoseg/backbone.hpp"
#include "demoseg/config.hpp"
#include "demoseg/error.hpp"
#include "demoseg/evaluator.hpp"
#include "demoseg/experiments.hpp"
#include "demoseg/gradcheck.hpp"
#include "demoseg/trainer.hpp"
#include "demoseg/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demoseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

Extent3 parse_shape(const std::string& s) {
  std::vector<std::int64_t> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw ContractViolation("bad shape '" + s + "'");
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ContractViolation("shape must be N or D,H,W");
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write " + file.string());
  os << text;
}

void echo_config(const fs::path& out, const std::string& command, const json& args,
                 const std::optional<RunConfig>& run = std::nullopt) {
  fs::create_directories(out);
  json j = {{"command", command}, {"args", args}};
  if (run) j["run_config"] = *run;
  write_text(out / "config.json", j.dump(2) + "\n");
}

RunConfig run_config_from(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

std::vector<ModalityIndicator> parse_scenarios(const std::vector<std::string>& bits) {
  std::vector<ModalityIndicator> out;
  for (const auto& b : bits) out.push_back(ModalityIndicator::from_string(b));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incomplete multi-modal brain tumour segmentation on desk-scale phantoms"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "demoseg 0.1.0");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write seeded phantom cases and a 70/10/20 manifest");
  int gen_n = 10;
  std::string gen_shape = "32";
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_config;
  bool gen_force = false;
  gen->add_option("--n", gen_n, "Number of cases")->check(CLI::PositiveNumber);
  gen->add_option("--shape", gen_shape, "N or D,H,W");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--config", gen_config, "Run config (model section used for shape checks)");
  gen->add_flag("--force", gen_force, "Replace cases in a non-empty directory");

  // train
  auto* tr = app.add_subcommand("train", "Train with random modality perturbation");
  std::string tr_manifest, tr_config, tr_out = "runs/train", tr_resume;
  std::optional<std::uint64_t> tr_seed;
  int tr_stop = -1;
  bool tr_quiet = false;
  tr->add_option("--manifest", tr_manifest, "Dataset manifest")->required();
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--seed", tr_seed, "Override train.seed");
  tr->add_option("--stop-after-epoch", tr_stop, "Stop after this many completed epochs");
  tr->add_flag("--quiet", tr_quiet, "No per-iteration progress");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint over the 15 missing-modality scenarios");
  std::string ev_ckpt, ev_manifest, ev_config, ev_order, ev_out = "runs/eval";
  std::vector<std::string> ev_scen;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "Dataset manifest (test split)")->required();
  ev->add_option("--scenario", ev_scen, "Availability bits in t1,tc,t2,fl order, e.g. 1000 (repeatable)");
  ev->add_option("--rcr-order", ev_order, "Compensation order, e.g. I,II,III");
  ev->add_option("--config", ev_config, "Run config JSON (eval section overrides the checkpoint's)");
  ev->add_option("--out", ev_out, "Output directory");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  std::string ab_kind, ab_manifest, ab_config, ab_out = "runs/ablate";
  std::vector<std::string> ab_scen;
  ab->add_option("--kind", ab_kind, "components | rcr-order | kd-placement")->required();
  ab->add_option("--manifest", ab_manifest, "Dataset manifest")->required();
  ab->add_option("--config", ab_config, "Base run config JSON");
  ab->add_option("--scenario", ab_scen, "Restrict evaluation scenarios (repeatable)");
  ab->add_option("--out", ab_out, "Output directory");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  int gc_seeds = 20;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  std::vector<std::string> gc_cases;
  std::string gc_out = "runs/gradcheck";
  bool gc_list = false;
  gc->add_option("--seeds", gc_seeds, "Random draws per op")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "Base seed");
  gc->add_option("--tolerance", gc_tol, "Max relative error");
  gc->add_option("--case", gc_cases, "Only these cases (repeatable)");
  gc->add_flag("--list", gc_list, "List case names and exit");
  gc->add_option("--out", gc_out, "Output directory");

  // efficiency
  auto* ef = app.add_subcommand("efficiency", "Efficiency factor P = dDSC / (lambda Param + mu FLOPs / eta^3)");
  double ef_ddsc = 0, ef_eta = 1, ef_lambda = 0.5, ef_mu = 0.5;
  std::optional<double> ef_param, ef_flops;
  std::string ef_profile, ef_out = "runs/efficiency";
  int ef_patch = 128;
  ef->add_option("--ddsc", ef_ddsc, "DSC improvement, percent")->required();
  ef->add_option("--param", ef_param, "Enabling-module parameters, millions");
  ef->add_option("--flops", ef_flops, "Enabling-module FLOPs, billions");
  ef->add_option("--eta", ef_eta, "Patch scaling factor");
  ef->add_option("--lambda", ef_lambda, "Param weight");
  ef->add_option("--mu", ef_mu, "FLOPs weight");
  ef->add_option("--profile", ef_profile, "desk | full: measure Param/FLOPs of this build's enabling module");
  ef->add_option("--patch", ef_patch, "Cubic patch edge used with --profile");
  ef->add_option("--out", ef_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      RunConfig rc = run_config_from(gen_config);
      const Extent3 shape = parse_shape(gen_shape);
      auto res = generate_dataset(gen_n, shape, gen_seed, gen_out, gen_force, rc.model);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
      echo_config(gen_out, "gen-data",
                  {{"n", gen_n}, {"shape", {shape.d, shape.h, shape.w}}, {"seed", gen_seed}, {"force", gen_force}});
      std::cout << "wrote " << gen_n << " cases; splits " << res.manifest.train.size() << "/"
                << res.manifest.val.size() << "/" << res.manifest.test.size() << " -> " << res.manifest_path.string()
                << '\n';
      return kExitOk;
    }

    if (*tr) {
      RunConfig rc = run_config_from(tr_config);
      if (tr_seed) rc.train.seed = *tr_seed;
      rc.validate();
      const auto manifest = load_manifest(tr_manifest);
      echo_config(tr_out, "train",
                  {{"manifest", tr_manifest}, {"config", tr_config}, {"resume", tr_resume}, {"stop_after_epoch", tr_stop}},
                  rc);
      TrainOptions opt;
      opt.out_dir = tr_out;
      if (!tr_resume.empty()) opt.resume = tr_resume;
      opt.stop_after_epoch = tr_stop;
      const std::int64_t total = rc.train.total_iters();
      if (!tr_quiet) {
        opt.on_iteration = [total](const IterationLog& l) {
          if (l.iter % 10 == 0 || l.iter + 1 == total)
            std::fprintf(stderr, "iter %lld/%lld lr %.5f L_seg %.4f L_kd %.4f L_total %.4f (%.2fs)\n",
                         static_cast<long long>(l.iter), static_cast<long long>(total), l.lr, l.seg, l.kd, l.total,
                         l.seconds);
        };
      }
      auto res = train(manifest, rc, opt);
      std::cout << "checkpoint " << (fs::path(tr_out) / "checkpoint.bin").string() << " after "
                << res.checkpoint.iteration << " iterations\n";
      return kExitOk;
    }

    if (*ev) {
      const Checkpoint ck = Checkpoint::load(ev_ckpt);
      EvalConfig ecfg = ev_config.empty() ? ck.config.eval : load_run_config(ev_config).eval;
      std::optional<RelationshipTable> order;
      if (!ev_order.empty()) order = RelationshipTable::parse(ev_order);
      const auto manifest = load_manifest(ev_manifest);
      echo_config(ev_out, "eval",
                  {{"checkpoint", ev_ckpt},
                   {"manifest", ev_manifest},
                   {"scenario", ev_scen},
                   {"rcr_order", ev_order},
                   {"eval", ecfg}},
                  ck.config);
      const auto table = evaluate_scenarios(ck, manifest, ecfg, order, parse_scenarios(ev_scen));
      write_text(fs::path(ev_out) / "table.tsv", table.to_tsv());
      write_text(fs::path(ev_out) / "table.txt", table.to_text());
      std::cout << table.to_text();
      return kExitOk;
    }

    if (*ab) {
      const AblationKind kind = ablation_kind_from_string(ab_kind);
      RunConfig rc = run_config_from(ab_config);
      const auto manifest = load_manifest(ab_manifest);
      echo_config(ab_out, "ablate",
                  {{"kind", to_string(kind)}, {"manifest", ab_manifest}, {"config", ab_config}, {"scenario", ab_scen}},
                  rc);
      AblationOptions opt;
      opt.out_dir = ab_out;
      opt.scenarios = parse_scenarios(ab_scen);
      opt.progress = [](const std::string& s) { std::cerr << s << '\n'; };
      const auto report = run_ablation(kind, load_training_cases(manifest, "train"),
                                       load_training_cases(manifest, "test"), rc, opt);
      write_text(fs::path(ab_out) / "table.tsv", report.to_tsv());
      write_text(fs::path(ab_out) / "table.txt", report.to_text());
      std::cout << report.to_text();
      return kExitOk;
    }

    if (*gc) {
      if (gc_list) {
        for (const auto& n : gradient_suite_cases()) std::cout << n << '\n';
        return kExitOk;
      }
      echo_config(gc_out, "gradcheck", {{"seeds", gc_seeds}, {"seed", gc_seed}, {"tolerance", gc_tol}, {"case", gc_cases}});
      GradSuiteOptions opt;
      opt.seeds = gc_seeds;
      opt.base_seed = gc_seed;
      opt.check.tolerance = gc_tol;
      const auto reports = run_gradient_suite(opt, gc_cases);
      std::ostringstream tsv;
      tsv << "op\tmax_rel_error\ttolerance\ttrials\tchecked\tpass\n";
      bool ok = true;
      for (const auto& r : reports) {
        char line[256];
        std::snprintf(line, sizeof line, "%s\t%.3e\t%.1e\t%d\t%zu\t%s\n", r.op.c_str(), r.max_rel_error, r.tolerance,
                      r.trials, r.checked, r.pass ? "PASS" : "FAIL");
        tsv << line;
        ok = ok && r.pass;
      }
      write_text(fs::path(gc_out) / "table.tsv", tsv.str());
      std::cout << tsv.str();
      return ok ? kExitOk : kExitNumeric;
    }

    if (*ef) {
      EfficiencyInput in{ef_ddsc, 0, 0, ef_eta, ef_lambda, ef_mu};
      if (!ef_profile.empty()) {
        ModelConfig mc = ef_profile == "full" ? ModelConfig::full() : ModelConfig::desk();
        if (ef_profile != "full" && ef_profile != "desk") throw ContractViolation("unknown profile " + ef_profile);
        SegmentationNet<float> net(mc, 0);
        in.param_m = static_cast<double>(net.count_params(ParamScope::enabling)) / 1e6;
        in.flops_g = count_flops(mc, ParamScope::enabling, Extent3{ef_patch, ef_patch, ef_patch}) / 1e9;
      }
      if (ef_param) in.param_m = *ef_param;
      if (ef_flops) in.flops_g = *ef_flops;
      if (ef_profile.empty() && (!ef_param || !ef_flops))
        throw ContractViolation("give --param and --flops, or --profile");
      const double p = efficiency_factor(in);
      echo_config(ef_out, "efficiency",
                  {{"ddsc", in.delta_dsc},
                   {"param", in.param_m},
                   {"flops", in.flops_g},
                   {"eta", in.eta},
                   {"lambda", in.lambda},
                   {"mu", in.mu},
                   {"profile", ef_profile},
                   {"patch", ef_patch}});
      std::ostringstream tsv;
      char line[256];
      std::snprintf(line, sizeof line, "%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.3f\t%.6f\n", in.delta_dsc, in.param_m,
                    in.flops_g, in.eta, in.lambda, in.mu, p, p);
      tsv << "ddsc\tparam_m\tflops_g\teta\tlambda\tmu\tP\tP_exact\n" << line;
      write_text(fs::path(ef_out) / "table.tsv", tsv.str());
      std::printf("Param %.4fM  FLOPs %.3fG  P = %.3f (%.6f)\n", in.param_m, in.flops_g, p, p);
      return kExitOk;
    }
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
