#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cwda/alignment.hpp"
#include "cwda/model.hpp"
#include "cwda/synthdata.hpp"

namespace cwda {

struct TrainConfig {
  std::size_t epochs = 12;
  double learning_rate = 0.003;
  double lr_decay_fraction = 0.6;  // lr *= lr_decay_factor once this share of steps is done
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Global gradient-norm cap applied before each update; 0 disables it.
  double grad_clip = 5.0;
  /// Calibrated for the 32x32 toy model.
  LossWeights weights{0.003, 0.001, 0.1};
  ModuleToggles toggles;
  double grl_lambda = 1.0;
  bool use_decay_matrix = true;
  /// Also train the detector on labelled target data; the performance
  /// ceiling for adaptation.
  bool oracle = false;
  std::uint64_t seed = 1;
  BackboneConfig backbone;

  void validate() const;
};

struct EvalResult {
  double accuracy = 0.0;        // class correct and IoU >= 0.5
  double class_accuracy = 0.0;
  double mean_iou = 0.0;
  double rpn_cell_accuracy = 0.0;  // argmax objectness cell == centre cell
  std::size_t count = 0;
};

struct RunMetrics {
  std::vector<LossBreakdown> epochs;  // per-epoch mean over steps
  EvalResult source_val;
  EvalResult target_val;
  EvalResult target_test;
  double probe_acc = 0.0;
  double wall_seconds = 0.0;

  double source_val_acc() const { return source_val.accuracy; }
  double target_val_acc() const { return target_val.accuracy; }
  double target_test_acc() const { return target_test.accuracy; }
  double box_iou_mean() const { return target_test.mean_iou; }
};

/// SGD with momentum; weight decay touches only parameters flagged `decay`.
/// Parameters that received no gradient in a step are left untouched.
class Sgd {
 public:
  Sgd(std::vector<NamedParameter> params, double momentum, double weight_decay);
  /// Rescales the gradients so their global L2 norm is at most `max_norm`
  /// (no-op when 0). Returns the norm before rescaling.
  double clip(double max_norm);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<NamedParameter> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Builds the objective for one training step: detection (plus toy RPN
/// objectness) on the labelled image, and every enabled alignment term on
/// the (source, target) pair. `target_image` may be null when no alignment
/// module is enabled.
Objective step_objective(DetectorModel& model, const Tensor& source_image, const std::optional<ObjectLabel>& truth,
                         const Tensor* target_image, const TrainConfig& config);

/// Summed BCE of the objectness map against a one-hot centre-cell target.
Tensor objectness_loss(const Tensor& objectness, const ObjectLabel& truth);

struct TrainResult {
  DetectorModel model;
  RunMetrics metrics;
};

/// Called after every epoch with (epoch index, mean breakdown).
using EpochCallback = std::function<void(std::size_t, const LossBreakdown&)>;

/// One source and one target sample per step; an epoch is one pass over the
/// source training split (both training splits for oracle runs). Throws
/// NumericalError with a state dump if any loss turns non-finite.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch = {});

/// Fills the evaluation fields of `metrics` (val/test accuracies, probe).
void evaluate_run(DetectorModel& model, const Dataset& dataset, std::uint64_t seed, RunMetrics& metrics);

EvalResult evaluate(DetectorModel& model, const std::vector<Sample>& samples);

/// One model output reduced to what scoring needs.
struct Prediction {
  int class_id = 0;
  std::array<double, 4> box{};
  std::size_t objectness_cell = 0;  // flat argmax of the objectness map
};

/// Scores predictions against truth; `grid_h` x `grid_w` is the objectness
/// map size used to locate the true centre cell.
EvalResult score(const std::vector<Prediction>& predictions, const std::vector<ObjectLabel>& truths,
                 std::size_t grid_h, std::size_t grid_w);

/// Intersection over union of two (cx, cy, w, h) boxes.
double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

/// Held-out accuracy of a logistic-regression domain classifier. Features
/// are standardized with training statistics; labels are 0/1.
double probe_accuracy(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                      const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y,
                      std::uint64_t seed);

/// Global-average-pooled stage-5 features of each sample.
std::vector<std::vector<double>> stage5_features(DetectorModel& model, const std::vector<Sample>& samples);

/// Domain separability of frozen stage-5 features: trained on the val
/// splits of both domains, measured on the test splits, with each domain
/// truncated to the smaller count. 0.5 is chance.
double domain_probe(DetectorModel& model, const Dataset& dataset, std::uint64_t seed);

/// Held-out BCE of a freshly trained stage-5 SCA head (no GRL) on frozen
/// backbone features. Higher means the channels are harder to tell apart.
double sca_probe_loss(DetectorModel& model, const Dataset& dataset, std::uint64_t seed);

struct AblationRow {
  std::string group;  // "module" or "stage"
  std::string name;
  ModuleToggles toggles;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  RunMetrics metrics;
};

std::string toggles_name(const ModuleToggles& toggles);
std::vector<ModuleToggles> module_grid();
std::vector<ModuleToggles> stage_grid();

/// Source-only, each module alone, each pair and all three (8 rows), then
/// the cumulative SCA stage subsets with CCA and RDC on (6 rows).
std::vector<AblationRow> ablation_suite(const TrainConfig& base, const Dataset& dataset,
                                        const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace cwda
