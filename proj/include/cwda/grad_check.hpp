#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cwda/tensor.hpp"

namespace cwda {

struct LeafReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<LeafReport> leaves;
  double max_rel_error = 0.0;
  bool passed = true;
  /// GRL nodes found in the graph. Their backward deliberately disagrees with
  /// the forward pass, so any mismatch on leaves upstream of them is expected.
  std::size_t grl_nodes = 0;
  bool mismatch_expected() const { return grl_nodes > 0; }
};

struct NamedLeaf {
  std::string name;
  Tensor tensor;
};

/// Compares reverse-mode gradients of the scalar `f()` with central
/// differences for every entry of every leaf. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3); the floor keeps
/// near-zero gradients from amplifying round-off.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedLeaf>& leaves,
                           double step = 1e-5, double tol = 1e-4);

double relative_error(double analytic, double numeric);

}  // namespace cwda
