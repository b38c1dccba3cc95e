// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace demoseg {

namespace {

double evaluate(const GraphFn& graph, const std::vector<Tensor<double>>& inputs) {
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Var<double>::constant(t));
  return graph(leaves).value()[0];
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const GraphFn& graph,
                           const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt) {
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t));
  const Var<double> out = graph(leaves);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check(" + name + "): graph output must be scalar, got " + to_string(out.shape()));
  }
  backward(out);

  GradCheckReport report{name, 0.0, opt.tolerance, false, 0};
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = leaves[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + opt.step;
      const double fp = evaluate(graph, probe);
      probe[k][i] = x0 - opt.step;
      const double fm = evaluate(graph, probe);
      probe[k][i] = x0;

      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  report.pass = report.max_rel_error <= report.tolerance;
  return report;
}

}  // namespace demoseg
