#pragma once

// Channel-wise domain-alignment losses: the per-channel domain classifier
// loss (SCA), the decay-weighted gram matrix discrepancy (CCA), the
// per-location domain classifier loss on the RPN input (RDC) and the
// weighted objective that combines them with the detection loss.

#include <array>
#include <optional>
#include <vector>

#include "cwda/tensor.hpp"

namespace cwda {

/// 0 = source, 1 = target.
class DomainLabel {
 public:
  explicit DomainLabel(int value);
  static DomainLabel source() { return DomainLabel(0); }
  static DomainLabel target() { return DomainLabel(1); }
  int value() const { return value_; }
  bool is_target() const { return value_ == 1; }
  friend bool operator==(DomainLabel a, DomainLabel b) = default;

 private:
  int value_;
};

inline constexpr double kProbabilityFloor = 1e-7;
inline constexpr double kProbabilityCeil = 1.0 - 1e-7;
/// Fixed divisor of the off-diagonal decay entries.
inline constexpr double kDecayDivisor = 128.0;
inline constexpr std::size_t kNumStages = 5;

/// Summed binary cross-entropy of domain probabilities (probability of
/// "target") against one label, after clamping into [1e-7, 1 - 1e-7].
Tensor domain_bce(const Tensor& probabilities, DomainLabel label);

/// Per-stage self channel-wise loss for one image: `probs` is the (C, 1)
/// output of an SCA head.
Tensor sca_loss_stage(const Tensor& probs, DomainLabel label);

/// Sum over the enabled stages. Throws ConfigError on an empty list.
Tensor sca_loss_total(const std::vector<Tensor>& per_stage);

struct GramMatrix {
  Tensor g_ori;  // (C, H*W)
  Tensor g;      // (C, C)
};

GramMatrix gram(const Tensor& feature);

/// (c, c) matrix: 1 on the diagonal, exp(-|i-j|) / 128 elsewhere.
Tensor decay_matrix(std::size_t c);

/// gram(feature).g weighted element-wise by decay_matrix(C). With
/// `use_decay = false` the weighting is all ones (plain gram).
Tensor decay_gram(const Tensor& feature, bool use_decay = true);

/// Mean squared difference between the source and target decay gram
/// matrices, averaged over all C*C entries.
Tensor cca_loss(const Tensor& source, const Tensor& target, bool use_decay = true);

/// Summed per-location BCE over an (H, W) map of domain probabilities.
Tensor rdc_loss(const Tensor& location_probs, DomainLabel label);

struct LossWeights {
  double lambda_s = 1.0;
  double lambda_c = 1.0;
  double lambda_r = 1.0;

  void validate() const;
};

struct ModuleToggles {
  std::array<bool, kNumStages> sca_stages{};  // index r-1 for stage r
  bool cca = false;
  bool rdc = false;

  bool sca() const;
  bool any() const { return sca() || cca || rdc; }
  static ModuleToggles none() { return {}; }
  static ModuleToggles all();
};

struct LossBreakdown {
  double l_det = 0.0;
  double l_cls = 0.0;
  double l_loc = 0.0;
  double l_s = 0.0;
  std::array<double, kNumStages> l_s_stage{};
  double l_c = 0.0;
  double l_r = 0.0;
  double l_total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& other);
  LossBreakdown scaled(double factor) const;
};

/// Loss tensors for one training step. Detection terms are present only
/// when the step carries labels; stage entries are indexed r-1.
struct ObjectiveInputs {
  std::optional<Tensor> l_cls;
  std::optional<Tensor> l_loc;
  std::array<std::optional<Tensor>, kNumStages> l_s_stage;
  std::optional<Tensor> l_c;
  std::optional<Tensor> l_r;
};

struct Objective {
  Tensor total;
  LossBreakdown breakdown;
};

/// l_total = l_det + lambda_s*l_s + lambda_c*l_c + lambda_r*l_r, with
/// l_det = l_cls + l_loc. Disabled modules are left out of the sum entirely.
Objective total_objective(const ObjectiveInputs& inputs, const LossWeights& weights, const ModuleToggles& toggles);

/// Recomputes l_total from already-evaluated components, in the same order
/// and with the same toggles as total_objective.
double combine(const LossBreakdown& terms, const LossWeights& weights, const ModuleToggles& toggles);

}  // namespace cwda
