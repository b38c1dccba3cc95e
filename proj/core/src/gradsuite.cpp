// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "demoseg/cssa.hpp"
#include "demoseg/decoupler.hpp"
#include "demoseg/error.hpp"
#include "demoseg/gradcheck.hpp"
#include "demoseg/losses.hpp"
#include "demoseg/params.hpp"
#include "demoseg/rng.hpp"

namespace demoseg {

namespace {

using V = Var<double>;
using Inputs = std::vector<Tensor<double>>;

Tensor<double> uniform(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitude in [margin, 1] with random sign, so no entry sits near a kink at 0.
Tensor<double> away_from_zero(const Shape& s, Rng& rng, double margin = 0.05) {
  Tensor<double> t(s);
  for (auto& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, 1.0);
  return t;
}

// Fixed, non-uniform upstream weights so every output element matters differently.
V weighted_sum(const V& y) {
  Tensor<double> w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.37 * double(i) + 0.11) + 0.2;
  return ops::sum(ops::mul(y, V::constant(std::move(w))));
}

struct Case {
  std::string name;
  // Fills inputs and the graph for one random draw; false asks for a redraw.
  std::function<bool(Rng&, Inputs&, GraphFn&)> build;
};

V undefined() { return V(); }

std::vector<Case> make_cases() {
  std::vector<Case> cs;
  auto unary = [&](std::string name, Shape shape, std::function<V(const V&)> f, double lo = -1, double hi = 1,
                   bool kink_at_zero = false) {
    cs.push_back({std::move(name), [=](Rng& rng, Inputs& in, GraphFn& g) {
                    in = {kink_at_zero ? away_from_zero(shape, rng) : uniform(shape, rng, lo, hi)};
                    g = [f](const std::vector<V>& x) { return weighted_sum(f(x[0])); };
                    return true;
                  }});
  };

  for (int stride : {1, 2}) {
    cs.push_back({"conv3d_k3_s" + std::to_string(stride), [stride](Rng& rng, Inputs& in, GraphFn& g) {
                    in = {uniform({2, 4, 4, 4}, rng), uniform({3, 2, 3, 3, 3}, rng), uniform({3}, rng)};
                    g = [stride](const std::vector<V>& x) { return weighted_sum(ops::conv3d(x[0], x[1], x[2], stride)); };
                    return true;
                  }});
  }
  cs.push_back({"conv3d_k1", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 3, 2}, rng), uniform({4, 3, 1, 1, 1}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::conv3d(x[0], x[1], undefined(), 1)); };
                  return true;
                }});
  cs.push_back({"conv_transpose3d", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2, 2}, rng), uniform({3, 2, 2, 2, 2}, rng), uniform({2}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::conv_transpose3d(x[0], x[1], x[2])); };
                  return true;
                }});
  cs.push_back({"instance_norm", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 3, 2, 3}, rng, -2, 2), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::instance_norm(x[0], x[1], x[2])); };
                  return true;
                }});
  unary("leaky_relu", {2, 3, 3, 3}, [](const V& x) { return ops::leaky_relu(x, 0.01); }, -1, 1, true);
  unary("sigmoid", {2, 3, 3, 3}, [](const V& x) { return ops::sigmoid(x); }, -3, 3);
  unary("log", {2, 3, 3}, [](const V& x) { return ops::log(x); }, 0.5, 2.0);
  unary("global_avg_pool", {3, 2, 3, 2}, [](const V& x) { return ops::global_avg_pool(x); });
  cs.push_back({"linear", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({5}, rng), uniform({4, 5}, rng), uniform({4}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::linear(x[0], x[1], x[2])); };
                  return true;
                }});
  unary("softmax_axis0", {4, 2, 2, 2}, [](const V& x) { return ops::softmax(x, 0); }, -2, 2);
  unary("softmax_axis2", {2, 3, 4}, [](const V& x) { return ops::softmax(x, 2); }, -2, 2);
  cs.push_back({"concat", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({2, 2, 3}, rng), uniform({1, 2, 3}, rng), uniform({2, 2, 3}, rng)};
                  g = [](const std::vector<V>& x) {
                    return ops::add(weighted_sum(ops::concat<double>({x[0], x[1]}, 0)),
                                    weighted_sum(ops::concat<double>({x[0], x[2]}, 2)));
                  };
                  return true;
                }});
  unary("slice", {4, 3, 3}, [](const V& x) { return ops::slice(ops::slice(x, 0, 1, 3), 2, 0, 2); });
  cs.push_back({"add", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({2, 3, 2}, rng), uniform({2, 3, 2}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::add(x[0], x[1])); };
                  return true;
                }});
  cs.push_back({"mul", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({2, 3, 2}, rng), uniform({2, 3, 2}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::mul(x[0], x[1])); };
                  return true;
                }});
  unary("scale", {2, 3, 2}, [](const V& x) { return ops::scale(x, -1.7); });
  cs.push_back({"sum", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2}, rng)};
                  g = [](const std::vector<V>& x) { return ops::sum(ops::mul(x[0], x[0])); };
                  return true;
                }});
  cs.push_back({"mean", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2}, rng)};
                  g = [](const std::vector<V>& x) { return ops::mean(ops::mul(x[0], x[0])); };
                  return true;
                }});
  cs.push_back({"channel_gather", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({4, 2, 2, 1}, rng)};
                  std::vector<std::int64_t> idx(5);
                  for (auto& v : idx) v = static_cast<std::int64_t>(rng.below(4));
                  g = [idx](const std::vector<V>& x) { return weighted_sum(ops::channel_gather(x[0], idx)); };
                  return true;
                }});
  cs.push_back({"channel_scale", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2, 2}, rng), uniform({3}, rng)};
                  g = [](const std::vector<V>& x) { return weighted_sum(ops::channel_scale(x[0], x[1])); };
                  return true;
                }});
  unary("avg_pool2", {2, 4, 4, 2}, [](const V& x) { return ops::avg_pool2(x); });

  for (bool soft : {false, true}) {
    cs.push_back({soft ? "cssa_forward_soft_gate" : "cssa_forward", [soft](Rng& rng, Inputs& in, GraphFn& g) {
                    const int c1 = 8;
                    ParameterStore<double> proto(rng.next_u64());
                    init_cssa(proto, "cssa", c1, 0.01);
                    in = {uniform({c1, 2, 2, 2}, rng, -2, 2)};
                    std::vector<std::string> names;
                    for (const auto& [name, v] : proto.entries()) {
                      names.push_back(name);
                      in.push_back(v.value());
                    }
                    // Redraw when two scores nearly tie: the sort is not differentiable there.
                    const auto s = channel_scores(V::constant(in[0]), proto, "cssa", 0.01).value();
                    std::vector<double> sorted(s.values().begin(), s.values().end());
                    std::sort(sorted.begin(), sorted.end());
                    for (std::size_t i = 1; i < sorted.size(); ++i) {
                      if (sorted[i] - sorted[i - 1] < 1e-3) return false;
                    }
                    g = [proto, soft](const std::vector<V>& x) {
                      ParameterStore<double> ps = proto;
                      for (std::size_t k = 0; k < ps.entries().size(); ++k) ps.entries()[k].second = x[k + 1];
                      return weighted_sum(cssa_forward(x[0], ps, "cssa", 0.01, soft).output);
                    };
                    return true;
                  }});
  }

  cs.push_back({"dice_ce_loss", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2, 3}, rng, -2, 2)};
                  std::vector<std::uint8_t> labels(12);
                  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));
                  g = [labels](const std::vector<V>& x) { return dice_ce_loss(x[0], labels, 1e-5); };
                  return true;
                }});
  cs.push_back({"channel_kl", [](Rng& rng, Inputs& in, GraphFn& g) {
                  in = {uniform({3, 2, 2, 2}, rng, -2, 2), uniform({3, 2, 2, 2}, rng, -2, 2)};
                  const double t = rng.uniform(0.5, 2.0);
                  g = [t](const std::vector<V>& x) { return channel_kl(x[0], x[1], t, false); };
                  return true;
                }});
  for (bool detach : {false, true}) {
    cs.push_back({detach ? "kd_loss_detached_teacher" : "kd_loss", [detach](Rng& rng, Inputs& in, GraphFn& g) {
                    // Three available modalities: t1, t2, fl. Inputs: 3 self then 6 mutual maps.
                    const std::array<Modality, 3> avail{Modality::t1, Modality::t2, Modality::fl};
                    const Shape sh{3, 2, 2, 1};
                    in.clear();
                    for (int k = 0; k < 9; ++k) in.push_back(uniform(sh, rng, -2, 2));
                    const double t = rng.uniform(0.5, 2.0);
                    std::vector<Tensor<double>> teachers;
                    if (detach) {
                      teachers.assign(in.begin(), in.begin() + 3);
                      in.erase(in.begin(), in.begin() + 3);
                    }
                    g = [avail, t, detach, teachers](const std::vector<V>& x) {
                      std::array<std::optional<DecoupledFeatures<double>>, kNumModalities> f;
                      std::size_t next = detach ? 0 : 3;
                      for (std::size_t a = 0; a < 3; ++a) {
                        DecoupledFeatures<double> d;
                        d.modality = avail[a];
                        d.sub_channels = 3;
                        d.self_pre = detach ? V::constant(teachers[a]) : x[a];
                        for (std::size_t b = 0; b < 3; ++b) {
                          if (b != a) d.mutual_pre[index_of(avail[b])] = x[next++];
                        }
                        f[index_of(avail[a])] = std::move(d);
                      }
                      return kd_loss(f, t, false, detach);
                    };
                    return true;
                  }});
  }
  return cs;
}

}  // namespace

std::vector<std::string> gradient_suite_cases() {
  std::vector<std::string> out;
  for (const auto& c : make_cases()) out.push_back(c.name);
  return out;
}

std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& opt, const std::vector<std::string>& only) {
  if (opt.seeds < 1) throw ContractViolation("gradient suite needs at least one seed");
  std::vector<GradCheckReport> reports;
  for (const auto& c : make_cases()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    GradCheckReport agg{c.name, 0.0, opt.check.tolerance, true, 0, 0};
    for (int s = 0; s < opt.seeds; ++s) {
      Rng rng(opt.base_seed ^ stable_hash(c.name) ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(s + 1)));
      Inputs in;
      GraphFn g;
      int attempts = 0;
      while (!c.build(rng, in, g)) {
        if (++attempts > 100) throw NumericError("gradient suite could not draw inputs for " + c.name);
      }
      const auto r = grad_check(c.name, g, in, opt.check);
      agg.max_rel_error = std::max(agg.max_rel_error, r.max_rel_error);
      agg.checked += r.checked;
      agg.pass = agg.pass && r.pass;
      ++agg.trials;
    }
    reports.push_back(agg);
  }
  if (!only.empty() && reports.size() != only.size()) throw ContractViolation("unknown gradient suite case requested");
  return reports;
}

}  // namespace demoseg
