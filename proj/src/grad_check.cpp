#include "cwda/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cwda/errors.hpp"

namespace cwda {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedLeaf>& leaves, double step,
                           double tol) {
  GradCheckReport report;

  std::vector<std::vector<double>> analytic;
  {
    for (const auto& leaf : leaves) leaf.tensor.node()->grad.clear();
    Tensor out = f();
    if (out.numel() != 1) throw ContractError("grad_check needs a scalar function, got " + shape_str(out.shape()));
    for (auto* node : topological_order(out)) {
      if (node->op == "grl") ++report.grl_nodes;
    }
    backward(out);
    for (const auto& leaf : leaves) analytic.push_back(leaf.tensor.grad());
  }

  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor t = leaves[l].tensor;
    LeafReport leaf_report{leaves[l].name};
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = f().item();
      values[i] = original - step;
      const double minus = f().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double abs_err = std::abs(analytic[l][i] - numeric);
      leaf_report.max_abs_error = std::max(leaf_report.max_abs_error, abs_err);
      leaf_report.max_rel_error = std::max(leaf_report.max_rel_error, relative_error(analytic[l][i], numeric));
    }
    leaf_report.passed = leaf_report.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, leaf_report.max_rel_error);
    report.passed = report.passed && leaf_report.passed;
    report.leaves.push_back(std::move(leaf_report));
  }
  return report;
}

}  // namespace cwda
