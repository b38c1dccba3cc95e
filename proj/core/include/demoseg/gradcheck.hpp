// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "demoseg/diffops.hpp"

namespace demoseg {

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::size_t checked = 0;  ///< number of input elements probed
  int trials = 1;           ///< random draws folded into this report
};

/// Scalar-valued graph under test, built fresh from leaf inputs on every call.
using GraphFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  /// Gradients smaller than this are compared in absolute terms.
  double floor = 1e-3;
};

/// Compares reverse-mode gradients against central differences for every
/// element of every input. Throws ShapeError if the graph is not scalar.
GradCheckReport grad_check(const std::string& name, const GraphFn& graph,
                           const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opt = {});

struct GradSuiteOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  GradCheckOptions check;
};

/// Names of every case in the suite, in run order.
std::vector<std::string> gradient_suite_cases();

/// Runs every differentiable primitive, channel attention and both losses over
/// `seeds` random draws each; one report per case (worst error over draws).
/// `only` restricts to the named cases.
std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& opt = {},
                                                const std::vector<std::string>& only = {});

}  // namespace demoseg
