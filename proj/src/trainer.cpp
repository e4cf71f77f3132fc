#include "cwda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cwda/errors.hpp"
#include "cwda/ops.hpp"

namespace cwda {

void TrainConfig::validate() const {
  // Zero is allowed: a frozen run is a useful control.
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (!(grad_clip >= 0.0)) throw ConfigError("gradient clip must be nonnegative");
  if (!(lr_decay_fraction >= 0.0 && lr_decay_fraction <= 1.0)) throw ConfigError("lr decay fraction must be in [0, 1]");
  if (!(grl_lambda >= 0.0)) throw ParameterError("GRL lambda must be nonnegative");
  weights.validate();
  backbone.validate();
  if (oracle && toggles.any()) throw ConfigError("the oracle baseline trains without alignment modules");
}

Sgd::Sgd(std::vector<NamedParameter> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

double Sgd::clip(double max_norm) {
  double sq = 0.0;
  for (auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad_view()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= k;
    }
  }
  return norm;
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    auto grad = t.grad_view();
    auto w = t.mutable_data();
    auto& v = velocity_[i];
    const double wd = params_[i].decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grad[j] + wd * w[j];
      v[j] = momentum_ * v[j] + g;
      w[j] -= lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor objectness_loss(const Tensor& objectness, const ObjectLabel& truth) {
  const std::size_t h = objectness.dim(0), w = objectness.dim(1);
  Tensor target = objectness_target(truth, h, w);
  Tensor p = clamp(objectness, kProbabilityFloor, kProbabilityCeil);
  Tensor ll = add(mul(target, log(p)), mul(rsub(1.0, target), log(rsub(1.0, p))));
  return scale(sum(ll), -1.0);
}

Objective step_objective(DetectorModel& model, const Tensor& source_image, const std::optional<ObjectLabel>& truth,
                         const Tensor* target_image, const TrainConfig& config) {
  const ModuleToggles& on = config.toggles;
  if (on.any() && target_image == nullptr) throw ContractError("alignment modules need a target image");

  ObjectiveInputs in;
  auto src = model.backbone.forward(source_image);
  const Tensor& src_top = src.back().values;
  if (truth) {
    auto [l_cls, l_loc] = detection_loss(model.det.forward(src_top), truth);
    in.l_cls = add(l_cls, objectness_loss(model.rpn.forward(src_top), *truth));
    in.l_loc = l_loc;
  }

  if (on.any()) {
    auto tgt = model.backbone.forward(*target_image);
    const double lambda = config.grl_lambda;
    for (std::size_t r = 0; r < kNumStages; ++r) {
      if (!on.sca_stages[r]) continue;
      ScaHead& head = model.sca[r];
      in.l_s_stage[r] = add(sca_loss_stage(head.forward(src[r].values, lambda), DomainLabel::source()),
                            sca_loss_stage(head.forward(tgt[r].values, lambda), DomainLabel::target()));
    }
    if (on.cca) in.l_c = cca_loss(src_top, tgt.back().values, config.use_decay_matrix);
    if (on.rdc) {
      in.l_r = add(rdc_loss(model.rdc.forward(src_top, lambda), DomainLabel::source()),
                   rdc_loss(model.rdc.forward(tgt.back().values, lambda), DomainLabel::target()));
    }
  }
  return total_objective(in, config.weights, on);
}

namespace {

bool finite(const LossBreakdown& b) {
  double s = b.l_det + b.l_cls + b.l_loc + b.l_s + b.l_c + b.l_r + b.l_total;
  return std::isfinite(s);
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream os;
  os << "l_det=" << b.l_det << " l_cls=" << b.l_cls << " l_loc=" << b.l_loc << " l_s=" << b.l_s << " l_c=" << b.l_c
     << " l_r=" << b.l_r << " l_total=" << b.l_total;
  return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  DetectorModel model(config.backbone, config.seed);
  Sgd sgd(model.parameters(), config.momentum, config.weight_decay);

  // Oracle runs append the labelled target split.
  std::vector<const Sample*> labelled;
  for (const Sample& s : dataset.split(DomainLabel::source(), Split::Train)) labelled.push_back(&s);
  if (config.oracle) {
    for (const Sample& s : dataset.split(DomainLabel::target(), Split::Train)) labelled.push_back(&s);
  }
  const auto& unlabelled = dataset.split(DomainLabel::target(), Split::Train);
  std::mt19937_64 order_rng(config.seed ^ 0x5eed0001ULL);
  std::mt19937_64 target_rng(config.seed ^ 0x5eed0002ULL);
  std::uniform_int_distribution<std::size_t> pick_target(0, unlabelled.size() - 1);

  const std::size_t total_steps = config.epochs * labelled.size();
  const auto decay_step = static_cast<std::size_t>(std::ceil(config.lr_decay_fraction * static_cast<double>(total_steps)));
  std::size_t step = 0;

  RunMetrics metrics;
  std::vector<std::size_t> order(labelled.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    LossBreakdown sum;
    for (std::size_t i : order) {
      const Sample& sample = *labelled[i];
      const std::optional<ObjectLabel> truth = config.oracle ? oracle_label(sample) : sample.label();
      Tensor target_image;
      if (config.toggles.any()) target_image = unlabelled[pick_target(target_rng)].image();
      Objective obj = step_objective(model, sample.image(), truth, config.toggles.any() ? &target_image : nullptr,
                                     config);
      if (!finite(obj.breakdown)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", step " << step << ": " << describe(obj.breakdown);
        throw NumericalError(os.str());
      }
      sgd.zero_grad();
      backward(obj.total);
      sgd.clip(config.grad_clip);
      const double lr =
          step < decay_step ? config.learning_rate : config.learning_rate * config.lr_decay_factor;
      sgd.step(lr);
      sum += obj.breakdown;
      ++step;
    }
    const LossBreakdown mean = sum.scaled(1.0 / static_cast<double>(labelled.size()));
    metrics.epochs.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  sgd.zero_grad();
  evaluate_run(model, dataset, config.seed, metrics);
  metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(metrics)};
}

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double ax0 = a[0] - a[2] / 2, ax1 = a[0] + a[2] / 2, ay0 = a[1] - a[3] / 2, ay1 = a[1] + a[3] / 2;
  const double bx0 = b[0] - b[2] / 2, bx1 = b[0] + b[2] / 2, by0 = b[1] - b[3] / 2, by1 = b[1] + b[3] / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a[2] * a[3] + b[2] * b[3] - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

EvalResult score(const std::vector<Prediction>& predictions, const std::vector<ObjectLabel>& truths,
                 std::size_t grid_h, std::size_t grid_w) {
  if (predictions.size() != truths.size()) throw ContractError("prediction and truth counts differ");
  EvalResult r;
  r.count = predictions.size();
  if (predictions.empty()) return r;
  std::size_t correct = 0, class_correct = 0, cell_correct = 0;
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Prediction& p = predictions[i];
    const ObjectLabel& truth = truths[i];
    const double iou = box_iou(p.box, truth.box);
    iou_sum += iou;
    class_correct += p.class_id == truth.class_id;
    correct += p.class_id == truth.class_id && iou >= 0.5;
    cell_correct += p.objectness_cell == center_cell(truth, grid_h, grid_w);
  }
  const double n = static_cast<double>(predictions.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.class_accuracy = static_cast<double>(class_correct) / n;
  r.mean_iou = iou_sum / n;
  r.rpn_cell_accuracy = static_cast<double>(cell_correct) / n;
  return r;
}

EvalResult evaluate(DetectorModel& model, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  std::vector<Prediction> predictions;
  predictions.reserve(samples.size());
  std::size_t grid_h = 1, grid_w = 1;
  for (const auto& s : samples) {
    auto taps = model.backbone.forward(s.image());
    const Tensor& top = taps.back().values;
    Detection d = model.det.forward(top);
    auto logits = d.class_logits.data();
    Prediction p;
    p.class_id = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    p.box = {d.box[0], d.box[1], d.box[2], d.box[3]};
    Tensor obj = model.rpn.forward(top);
    auto od = obj.data();
    p.objectness_cell = static_cast<std::size_t>(std::max_element(od.begin(), od.end()) - od.begin());
    grid_h = obj.dim(0);
    grid_w = obj.dim(1);
    predictions.push_back(p);
  }
  return score(predictions, oracle_labels(samples), grid_h, grid_w);
}

void evaluate_run(DetectorModel& model, const Dataset& dataset, std::uint64_t seed, RunMetrics& metrics) {
  metrics.source_val = evaluate(model, dataset.split(DomainLabel::source(), Split::Val));
  metrics.target_val = evaluate(model, dataset.split(DomainLabel::target(), Split::Val));
  metrics.target_test = evaluate(model, dataset.split(DomainLabel::target(), Split::Test));
  metrics.probe_acc = domain_probe(model, dataset, seed);
}

std::vector<std::vector<double>> stage5_features(DetectorModel& model, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Tensor pooled = global_avg_pool(model.backbone.forward(s.image()).back().values);
    out.emplace_back(pooled.data().begin(), pooled.data().end());
  }
  return out;
}

double probe_accuracy(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                      const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y,
                      std::uint64_t seed) {
  if (train_x.empty() || test_x.empty()) throw ContractError("probe needs non-empty train and test sets");
  const std::size_t d = train_x.front().size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& x : train_x) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
  }
  for (auto& m : mu) m /= static_cast<double>(train_x.size());
  for (const auto& x : train_x) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
  }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(train_x.size()));
    if (s < 1e-12) s = 1.0;
  }
  auto standardize = [&](const std::vector<double>& x) {
    std::vector<double> z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = (x[j] - mu[j]) / sd[j];
    return z;
  };
  std::vector<std::vector<double>> ztrain;
  for (const auto& x : train_x) ztrain.push_back(standardize(x));

  constexpr std::size_t kEpochs = 30;
  constexpr double kLr = 0.01, kMomentum = 0.9, kDecay = 1e-3;
  std::vector<double> w(d, 0.0), vw(d, 0.0);
  double b = 0.0, vb = 0.0;
  std::mt19937_64 rng(seed ^ 0x9b0be0ULL);
  std::vector<std::size_t> order(ztrain.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < kEpochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const auto& z = ztrain[i];
      double logit = b;
      for (std::size_t j = 0; j < d; ++j) logit += w[j] * z[j];
      const double p = 1.0 / (1.0 + std::exp(-logit));
      const double err = p - train_y[i];
      for (std::size_t j = 0; j < d; ++j) {
        vw[j] = kMomentum * vw[j] + err * z[j] + kDecay * w[j];
        w[j] -= kLr * vw[j];
      }
      vb = kMomentum * vb + err;
      b -= kLr * vb;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const auto z = standardize(test_x[i]);
    double logit = b;
    for (std::size_t j = 0; j < d; ++j) logit += w[j] * z[j];
    correct += (logit > 0.0 ? 1 : 0) == test_y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

namespace {

void append_domain(std::vector<std::vector<double>>& x, std::vector<int>& y, std::vector<std::vector<double>> feats,
                   int label, std::size_t limit) {
  feats.resize(std::min(feats.size(), limit));
  for (auto& f : feats) {
    x.push_back(std::move(f));
    y.push_back(label);
  }
}

}  // namespace

double domain_probe(DetectorModel& model, const Dataset& dataset, std::uint64_t seed) {
  std::vector<std::vector<double>> train_x, test_x;
  std::vector<int> train_y, test_y;
  auto smaller = [&dataset](Split split) {
    return std::min(dataset.split(DomainLabel::source(), split).size(),
                    dataset.split(DomainLabel::target(), split).size());
  };
  const std::size_t n_train = smaller(Split::Val), n_test = smaller(Split::Test);
  for (int d = 0; d < 2; ++d) {
    const DomainLabel domain(d);
    append_domain(train_x, train_y, stage5_features(model, dataset.split(domain, Split::Val)), d, n_train);
    append_domain(test_x, test_y, stage5_features(model, dataset.split(domain, Split::Test)), d, n_test);
  }
  return probe_accuracy(train_x, train_y, test_x, test_y, seed);
}

double sca_probe_loss(DetectorModel& model, const Dataset& dataset, std::uint64_t seed) {
  auto taps = [&model](const std::vector<Sample>& samples) {
    NoGradGuard no_grad;
    std::vector<Tensor> out;
    for (const auto& s : samples) out.push_back(model.backbone.forward(s.image()).back().values.detach());
    return out;
  };
  const auto src_train = taps(dataset.split(DomainLabel::source(), Split::Val));
  const auto tgt_train = taps(dataset.split(DomainLabel::target(), Split::Val));
  const auto src_test = taps(dataset.split(DomainLabel::source(), Split::Test));
  const auto tgt_test = taps(dataset.split(DomainLabel::target(), Split::Test));

  std::mt19937_64 rng(seed ^ 0x5cab0e5ULL);
  ScaHead head(src_train.front().dim(0), rng);
  std::vector<NamedParameter> params{{"conv1.weight", head.conv1.weight, true}, {"conv1.bias", head.conv1.bias, false},
                                     {"bn.gamma", head.bn.gamma, false},         {"bn.beta", head.bn.beta, false},
                                     {"conv2.weight", head.conv2.weight, true}, {"conv2.bias", head.conv2.bias, false}};
  Sgd sgd(params, 0.9, 5e-4);
  const std::size_t n = std::min(src_train.size(), tgt_train.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  constexpr std::size_t kEpochs = 3;
  for (std::size_t e = 0; e < kEpochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      Tensor loss = add(sca_loss_stage(head.forward(src_train[i], std::nullopt), DomainLabel::source()),
                        sca_loss_stage(head.forward(tgt_train[i], std::nullopt), DomainLabel::target()));
      sgd.zero_grad();
      backward(loss);
      sgd.step(0.001);
    }
  }
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& t : src_test) total += sca_loss_stage(head.forward(t, std::nullopt, NormMode::Train), DomainLabel::source()).item();
  for (const auto& t : tgt_test) total += sca_loss_stage(head.forward(t, std::nullopt, NormMode::Train), DomainLabel::target()).item();
  return total / static_cast<double>(src_test.size() + tgt_test.size());
}

std::string toggles_name(const ModuleToggles& t) {
  if (!t.any()) return "source-only";
  std::string name;
  auto append = [&name](const std::string& part) { name += (name.empty() ? "" : "+") + part; };
  if (t.sca()) {
    std::string stages;
    for (std::size_t r = kNumStages; r-- > 0;) {
      if (t.sca_stages[r]) stages += std::to_string(r + 1);
    }
    append(stages.size() == kNumStages ? "SCA" : "SCA[" + stages + "]");
  }
  if (t.cca) append("CCA");
  if (t.rdc) append("RDC");
  return name;
}

std::vector<ModuleToggles> module_grid() {
  std::vector<ModuleToggles> grid;
  // Row order: none, S, C, R, SC, SR, CR, SCR.
  const bool rows[8][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  for (const auto& row : rows) {
    ModuleToggles t;
    if (row[0]) t.sca_stages.fill(true);
    t.cca = row[1];
    t.rdc = row[2];
    grid.push_back(t);
  }
  return grid;
}

std::vector<ModuleToggles> stage_grid() {
  const std::vector<std::vector<int>> subsets{{5}, {5, 4}, {5, 3}, {5, 4, 3}, {5, 4, 3, 2}, {5, 4, 3, 2, 1}};
  std::vector<ModuleToggles> grid;
  for (const auto& subset : subsets) {
    ModuleToggles t;
    for (int r : subset) t.sca_stages[static_cast<std::size_t>(r - 1)] = true;
    t.cca = true;
    t.rdc = true;
    grid.push_back(t);
  }
  return grid;
}

std::vector<AblationRow> ablation_suite(const TrainConfig& base, const Dataset& dataset,
                                        const std::function<void(const AblationRow&)>& on_row) {
  const std::string hash = dataset.hash();
  std::vector<AblationRow> rows;
  auto run = [&](const std::string& group, const ModuleToggles& toggles) {
    TrainConfig config = base;
    config.toggles = toggles;
    config.oracle = false;
    AblationRow row{group, toggles_name(toggles), toggles, base.seed, hash, train(config, dataset).metrics};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  };
  for (const auto& t : module_grid()) run("module", t);
  for (const auto& t : stage_grid()) run("stage", t);
  return rows;
}

}  // namespace cwda
