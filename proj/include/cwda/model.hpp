#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cwda/alignment.hpp"
#include "cwda/ops.hpp"
#include "cwda/tensor.hpp"

namespace cwda {

inline constexpr std::size_t kNumClasses = 3;

struct BackboneConfig {
  std::array<std::size_t, kNumStages> stage_channels{8, 16, 32, 64, 64};
  std::size_t convs_per_stage = 2;
  std::size_t input_channels = 3;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Activation tapped at the end of backbone stage `stage` (1-based).
struct FeatureMap {
  Tensor values;  // (C, H, W)
  std::size_t stage = 0;
};

struct ObjectLabel {
  int class_id = 0;
  std::array<double, 4> box{};  // cx, cy, w, h in [0, 1]
};

struct Detection {
  Tensor class_logits;  // (K)
  Tensor box;           // (4), sigmoid outputs
};

struct ConvLayer {
  Tensor weight;  // (Cout, Cin, k, k)
  Tensor bias;    // (Cout)

  static ConvLayer kaiming(std::size_t cin, std::size_t cout, std::size_t k, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias); }
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;

  static BatchNormLayer identity(std::size_t channels);
  Tensor forward(const Tensor& x, NormMode mode) { return batch_norm(x, gamma, beta, mode, stats); }
};

struct LinearLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out, 1)

  static LinearLayer kaiming(std::size_t in, std::size_t out, std::mt19937_64& rng);
  /// x is (in, 1).
  Tensor forward(const Tensor& x) const { return add(matmul(weight, x), bias); }
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::mt19937_64& rng);

  /// Image (3, S, S) with S a multiple of 16 -> the five stage outputs. Stages
  /// 1-4 end in 2x2 max pooling; stage 5 keeps stage-4 resolution.
  std::vector<FeatureMap> forward(const Tensor& image) const;

  std::vector<std::vector<ConvLayer>>& stages() { return stages_; }
  const std::vector<std::vector<ConvLayer>>& stages() const { return stages_; }

 private:
  std::vector<std::vector<ConvLayer>> stages_;
};

/// Self channel-wise alignment head: GRL -> conv3x3 -> BN -> ReLU -> conv3x3
/// -> global average pool -> sigmoid, giving one domain probability per
/// channel. `grl_lambda = nullopt` builds the same head without the GRL node.
struct ScaHead {
  ConvLayer conv1;
  BatchNormLayer bn;
  ConvLayer conv2;

  ScaHead() = default;
  ScaHead(std::size_t channels, std::mt19937_64& rng);
  Tensor forward(const Tensor& feature, std::optional<double> grl_lambda, NormMode mode = NormMode::Train);
};

/// Toy RPN: conv3x3 (C -> 1) -> sigmoid, one objectness probability per cell.
struct RpnHead {
  ConvLayer conv;

  RpnHead() = default;
  RpnHead(std::size_t channels, std::mt19937_64& rng);
  Tensor forward(const Tensor& feature) const;
};

/// RPN domain classifier: GRL -> three channel-halving conv3x3+ReLU -> 1x1
/// conv (C/8 -> 1) -> sigmoid, one domain probability per location.
struct RdcHead {
  std::array<ConvLayer, 3> convs;
  ConvLayer score;

  RdcHead() = default;
  RdcHead(std::size_t channels, std::mt19937_64& rng);
  Tensor forward(const Tensor& feature, std::optional<double> grl_lambda) const;
};

/// Global average pool -> linear map to K class logits and 4 box values.
struct DetectionHead {
  LinearLayer fc;

  DetectionHead() = default;
  DetectionHead(std::size_t channels, std::mt19937_64& rng);
  Detection forward(const Tensor& feature) const;
};

/// (l_cls, l_loc): softmax cross-entropy and smooth-L1 summed over the box.
std::pair<Tensor, Tensor> detection_loss(const Detection& prediction, const std::optional<ObjectLabel>& truth);

/// Per-cell objectness target: 1 in the cell containing the box centre.
Tensor objectness_target(const ObjectLabel& truth, std::size_t h, std::size_t w);
std::size_t center_cell(const ObjectLabel& truth, std::size_t h, std::size_t w);

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool decay;  // conv/linear weights only
};

class DetectorModel {
 public:
  DetectorModel(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  Backbone backbone;
  std::array<ScaHead, kNumStages> sca;
  RpnHead rpn;
  RdcHead rdc;
  DetectionHead det;

  /// Every trainable tensor in a fixed order.
  std::vector<NamedParameter> parameters();
  /// Non-trainable state (batch-norm running statistics), by name.
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();
  std::size_t parameter_count();
  /// Independent copy; the default copy shares parameter storage.
  DetectorModel deep_copy();

  void save(const std::filesystem::path& path);
  static DetectorModel load(const std::filesystem::path& path);

 private:
  BackboneConfig config_;
};

}  // namespace cwda
