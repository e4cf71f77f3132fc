#include "cwda/model.hpp"

#include <cmath>

#include "cwda/errors.hpp"

namespace cwda {

void BackboneConfig::validate() const {
  for (auto c : stage_channels) {
    if (c == 0) throw ConfigError("stage channel counts must be positive");
  }
  if (convs_per_stage == 0) throw ConfigError("convs_per_stage must be positive");
  if (input_channels == 0) throw ConfigError("input_channels must be positive");
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace

ConvLayer ConvLayer::kaiming(std::size_t cin, std::size_t cout, std::size_t k, std::mt19937_64& rng) {
  return {kaiming_uniform({cout, cin, k, k}, cin * k * k, rng), Tensor::zeros({cout}, true)};
}

BatchNormLayer BatchNormLayer::identity(std::size_t channels) {
  return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true), RunningStats::identity(channels)};
}

LinearLayer LinearLayer::kaiming(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {kaiming_uniform({out, in}, in, rng), Tensor::zeros({out, 1}, true)};
}

Backbone::Backbone(const BackboneConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::size_t cin = config.input_channels;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    std::vector<ConvLayer> convs;
    for (std::size_t i = 0; i < config.convs_per_stage; ++i) {
      convs.push_back(ConvLayer::kaiming(cin, config.stage_channels[s], 3, rng));
      cin = config.stage_channels[s];
    }
    stages_.push_back(std::move(convs));
  }
}

std::vector<FeatureMap> Backbone::forward(const Tensor& image) const {
  if (image.rank() != 3) throw DimensionError("backbone expects a (C, S, S) image, got " + shape_str(image.shape()));
  const std::size_t s = image.dim(1);
  if (image.dim(2) != s || s % 16 != 0) {
    throw ConfigError("backbone needs a square image with side a multiple of 16, got " + shape_str(image.shape()));
  }
  std::vector<FeatureMap> taps;
  Tensor x = image;
  for (std::size_t st = 0; st < stages_.size(); ++st) {
    for (const auto& conv : stages_[st]) x = relu(conv.forward(x));
    if (st + 1 < kNumStages) x = max_pool2(x);
    taps.push_back({x, st + 1});
  }
  return taps;
}

ScaHead::ScaHead(std::size_t channels, std::mt19937_64& rng)
    : conv1(ConvLayer::kaiming(channels, channels, 3, rng)),
      bn(BatchNormLayer::identity(channels)),
      conv2(ConvLayer::kaiming(channels, channels, 3, rng)) {}

Tensor ScaHead::forward(const Tensor& feature, std::optional<double> grl_lambda, NormMode mode) {
  Tensor x = grl_lambda ? grl(feature, *grl_lambda) : feature;
  x = relu(bn.forward(conv1.forward(x), mode));
  x = conv2.forward(x);
  return sigmoid(global_avg_pool(x));
}

RpnHead::RpnHead(std::size_t channels, std::mt19937_64& rng) : conv(ConvLayer::kaiming(channels, 1, 3, rng)) {}

Tensor RpnHead::forward(const Tensor& feature) const {
  Tensor logits = conv.forward(feature);
  return sigmoid(reshape(logits, {feature.dim(1), feature.dim(2)}));
}

RdcHead::RdcHead(std::size_t channels, std::mt19937_64& rng) {
  if (channels % 8 != 0) {
    throw ConfigError("RPN domain classifier needs channels divisible by 8, got " + std::to_string(channels));
  }
  std::size_t c = channels;
  for (auto& conv : convs) {
    conv = ConvLayer::kaiming(c, c / 2, 3, rng);
    c /= 2;
  }
  score = ConvLayer::kaiming(c, 1, 1, rng);
}

Tensor RdcHead::forward(const Tensor& feature, std::optional<double> grl_lambda) const {
  if (feature.dim(0) != convs[0].weight.dim(1)) {
    throw ConfigError("RPN domain classifier built for " + std::to_string(convs[0].weight.dim(1)) +
                      " channels, got " + shape_str(feature.shape()));
  }
  Tensor x = grl_lambda ? grl(feature, *grl_lambda) : feature;
  for (const auto& conv : convs) x = relu(conv.forward(x));
  x = score.forward(x);
  return sigmoid(reshape(x, {feature.dim(1), feature.dim(2)}));
}

DetectionHead::DetectionHead(std::size_t channels, std::mt19937_64& rng)
    : fc(LinearLayer::kaiming(channels, kNumClasses + 4, rng)) {}

Detection DetectionHead::forward(const Tensor& feature) const {
  Tensor out = fc.forward(global_avg_pool(feature));
  return {slice(out, 0, kNumClasses), sigmoid(slice(out, kNumClasses, 4))};
}

std::pair<Tensor, Tensor> detection_loss(const Detection& prediction, const std::optional<ObjectLabel>& truth) {
  if (!truth) throw ContractError("detection loss needs ground truth; gate target-domain samples before calling");
  if (truth->class_id < 0 || static_cast<std::size_t>(truth->class_id) >= prediction.class_logits.numel()) {
    throw ContractError("class id " + std::to_string(truth->class_id) + " out of range");
  }
  Tensor log_probs = log_softmax(prediction.class_logits);
  Tensor l_cls = scale(slice(log_probs, static_cast<std::size_t>(truth->class_id), 1), -1.0);
  Tensor target = Tensor::from({4}, {truth->box.begin(), truth->box.end()});
  return {l_cls, smooth_l1(prediction.box, target)};
}

std::size_t center_cell(const ObjectLabel& truth, std::size_t h, std::size_t w) {
  auto cell = [](double c, std::size_t n) {
    const auto idx = static_cast<std::size_t>(std::floor(c * static_cast<double>(n)));
    return std::min(idx, n - 1);
  };
  return cell(truth.box[1], h) * w + cell(truth.box[0], w);
}

Tensor objectness_target(const ObjectLabel& truth, std::size_t h, std::size_t w) {
  Tensor t = Tensor::zeros({h, w});
  t.mutable_data()[center_cell(truth, h, w)] = 1.0;
  return t;
}

DetectorModel::DetectorModel(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  backbone = Backbone(config, rng);
  for (std::size_t s = 0; s < kNumStages; ++s) sca[s] = ScaHead(config.stage_channels[s], rng);
  const std::size_t top = config.stage_channels.back();
  rpn = RpnHead(top, rng);
  rdc = RdcHead(top, rng);
  det = DetectionHead(top, rng);
}

std::vector<NamedParameter> DetectorModel::parameters() {
  std::vector<NamedParameter> out;
  auto conv = [&out](const std::string& prefix, ConvLayer& layer) {
    out.push_back({prefix + ".weight", layer.weight, true});
    out.push_back({prefix + ".bias", layer.bias, false});
  };
  auto& stages = backbone.stages();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      conv("backbone.s" + std::to_string(s + 1) + ".conv" + std::to_string(i), stages[s][i]);
    }
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::string p = "sca.s" + std::to_string(s + 1);
    conv(p + ".conv1", sca[s].conv1);
    out.push_back({p + ".bn.gamma", sca[s].bn.gamma, false});
    out.push_back({p + ".bn.beta", sca[s].bn.beta, false});
    conv(p + ".conv2", sca[s].conv2);
  }
  conv("rpn.conv", rpn.conv);
  for (std::size_t i = 0; i < rdc.convs.size(); ++i) conv("rdc.conv" + std::to_string(i + 1), rdc.convs[i]);
  conv("rdc.score", rdc.score);
  out.push_back({"det.fc.weight", det.fc.weight, true});
  out.push_back({"det.fc.bias", det.fc.bias, false});
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> DetectorModel::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::string p = "sca.s" + std::to_string(s + 1) + ".bn";
    out.emplace_back(p + ".running_mean", &sca[s].bn.stats.mean);
    out.emplace_back(p + ".running_var", &sca[s].bn.stats.var);
  }
  return out;
}

std::size_t DetectorModel::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

DetectorModel DetectorModel::deep_copy() {
  DetectorModel copy(config_, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.data();
    std::copy(from.begin(), from.end(), dst[i].tensor.mutable_data().begin());
  }
  auto src_buf = buffers();
  auto dst_buf = copy.buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i) *dst_buf[i].second = *src_buf[i].second;
  return copy;
}

}  // namespace cwda
