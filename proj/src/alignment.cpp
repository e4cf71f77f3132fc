#include "cwda/alignment.hpp"

#include <cmath>
#include <cstdlib>

#include "cwda/errors.hpp"
#include "cwda/ops.hpp"

namespace cwda {

DomainLabel::DomainLabel(int value) : value_(value) {
  if (value != 0 && value != 1) throw ContractError("domain label must be 0 or 1, got " + std::to_string(value));
}

Tensor domain_bce(const Tensor& probabilities, DomainLabel label) {
  if (!probabilities.defined()) throw ContractError("domain probabilities are empty");
  Tensor p = clamp(probabilities, kProbabilityFloor, kProbabilityCeil);
  // Target (D = 1) pays -log p, source (D = 0) pays -log(1 - p).
  Tensor log_likelihood = label.is_target() ? log(p) : log(rsub(1.0, p));
  return scale(sum(log_likelihood), -1.0);
}

Tensor sca_loss_stage(const Tensor& probs, DomainLabel label) { return domain_bce(probs, label); }

Tensor sca_loss_total(const std::vector<Tensor>& per_stage) {
  if (per_stage.empty()) throw ConfigError("self channel-wise loss enabled with no stages");
  Tensor total = per_stage.front();
  for (std::size_t i = 1; i < per_stage.size(); ++i) total = add(total, per_stage[i]);
  return total;
}

GramMatrix gram(const Tensor& feature) {
  if (feature.rank() != 3) throw DimensionError("gram expects a (C, H, W) feature map, got " + shape_str(feature.shape()));
  const std::size_t c = feature.dim(0);
  Tensor g_ori = reshape(feature, {c, feature.dim(1) * feature.dim(2)});
  Tensor g = matmul(g_ori, transpose(g_ori));
  return {g_ori, g};
}

Tensor decay_matrix(std::size_t c) {
  if (c == 0) throw ContractError("decay matrix needs at least one channel");
  std::vector<double> values(c * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double distance = static_cast<double>(i > j ? i - j : j - i);
      values[i * c + j] = (i == j) ? 1.0 : std::exp(-distance) / kDecayDivisor;
    }
  }
  return Tensor::from({c, c}, std::move(values));
}

Tensor decay_gram(const Tensor& feature, bool use_decay) {
  Tensor g = gram(feature).g;
  if (!use_decay) return g;
  return mul(g, decay_matrix(feature.dim(0)));
}

Tensor cca_loss(const Tensor& source, const Tensor& target, bool use_decay) {
  if (source.rank() != 3 || target.rank() != 3) {
    throw DimensionError("cca_loss expects (C, H, W) feature maps, got " + shape_str(source.shape()) + " and " +
                         shape_str(target.shape()));
  }
  if (source.dim(0) != target.dim(0)) {
    throw DimensionError("cca_loss channel mismatch: " + shape_str(source.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  Tensor diff = sub(decay_gram(source, use_decay), decay_gram(target, use_decay));
  return mean(square(diff));
}

Tensor rdc_loss(const Tensor& location_probs, DomainLabel label) { return domain_bce(location_probs, label); }

void LossWeights::validate() const {
  if (!(lambda_s >= 0.0) || !(lambda_c >= 0.0) || !(lambda_r >= 0.0)) {
    throw ParameterError("loss weights must be nonnegative");
  }
}

bool ModuleToggles::sca() const {
  for (bool on : sca_stages) {
    if (on) return true;
  }
  return false;
}

ModuleToggles ModuleToggles::all() {
  ModuleToggles t;
  t.sca_stages.fill(true);
  t.cca = true;
  t.rdc = true;
  return t;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& other) {
  l_det += other.l_det;
  l_cls += other.l_cls;
  l_loc += other.l_loc;
  l_s += other.l_s;
  for (std::size_t r = 0; r < kNumStages; ++r) l_s_stage[r] += other.l_s_stage[r];
  l_c += other.l_c;
  l_r += other.l_r;
  l_total += other.l_total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double factor) const {
  LossBreakdown out = *this;
  out.l_det *= factor;
  out.l_cls *= factor;
  out.l_loc *= factor;
  out.l_s *= factor;
  for (auto& v : out.l_s_stage) v *= factor;
  out.l_c *= factor;
  out.l_r *= factor;
  out.l_total *= factor;
  return out;
}

namespace {

void accumulate(std::optional<Tensor>& total, const Tensor& term) {
  total = total ? add(*total, term) : term;
}

}  // namespace

Objective total_objective(const ObjectiveInputs& inputs, const LossWeights& weights, const ModuleToggles& toggles) {
  weights.validate();
  LossBreakdown b;
  std::optional<Tensor> total;

  if (inputs.l_cls.has_value() != inputs.l_loc.has_value()) {
    throw ContractError("detection loss needs both classification and localization terms");
  }
  if (inputs.l_cls) {
    Tensor l_det = add(*inputs.l_cls, *inputs.l_loc);
    b.l_cls = inputs.l_cls->item();
    b.l_loc = inputs.l_loc->item();
    b.l_det = l_det.item();
    total = l_det;
  }

  if (toggles.sca()) {
    std::vector<Tensor> stages;
    for (std::size_t r = 0; r < kNumStages; ++r) {
      if (!toggles.sca_stages[r]) continue;
      if (!inputs.l_s_stage[r]) {
        throw ContractError("stage " + std::to_string(r + 1) + " is enabled but has no SCA loss");
      }
      stages.push_back(*inputs.l_s_stage[r]);
      b.l_s_stage[r] = inputs.l_s_stage[r]->item();
    }
    Tensor l_s = sca_loss_total(stages);
    b.l_s = l_s.item();
    accumulate(total, scale(l_s, weights.lambda_s));
  }
  if (toggles.cca) {
    if (!inputs.l_c) throw ContractError("CCA is enabled but has no loss");
    b.l_c = inputs.l_c->item();
    accumulate(total, scale(*inputs.l_c, weights.lambda_c));
  }
  if (toggles.rdc) {
    if (!inputs.l_r) throw ContractError("RDC is enabled but has no loss");
    b.l_r = inputs.l_r->item();
    accumulate(total, scale(*inputs.l_r, weights.lambda_r));
  }

  if (!total) total = Tensor::scalar(0.0);
  b.l_total = total->item();
  return {*total, b};
}

double combine(const LossBreakdown& terms, const LossWeights& weights, const ModuleToggles& toggles) {
  double total = terms.l_det;
  if (toggles.sca()) total += weights.lambda_s * terms.l_s;
  if (toggles.cca) total += weights.lambda_c * terms.l_c;
  if (toggles.rdc) total += weights.lambda_r * terms.l_r;
  return total;
}

}  // namespace cwda
