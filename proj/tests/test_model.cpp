#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "cwda/errors.hpp"
#include "cwda/model.hpp"

using namespace cwda;

namespace {

Tensor random_image(std::uint64_t seed, std::size_t side = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(3 * side * side);
  for (auto& x : v) x = u(rng);
  return Tensor::from({3, side, side}, v);
}

Tensor random_feature(std::uint64_t seed, Shape shape) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), v);
}

std::vector<double> backbone_grads(DetectorModel& m) {
  std::vector<double> out;
  for (auto& p : m.parameters()) {
    if (p.name.rfind("backbone.", 0) != 0) continue;
    auto g = p.tensor.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void clear(DetectorModel& m) {
  for (auto& p : m.parameters()) p.tensor.zero_grad();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cwda_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Backbone, StageSizesFor32) {
  DetectorModel m(BackboneConfig{}, 1);
  auto taps = m.backbone.forward(random_image(1));
  ASSERT_EQ(taps.size(), 5u);
  const std::size_t sizes[] = {16, 8, 4, 2, 2};
  const std::size_t channels[] = {8, 16, 32, 64, 64};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(taps[i].stage, i + 1);
    EXPECT_EQ(taps[i].values.shape(), (Shape{channels[i], sizes[i], sizes[i]}));
  }
}

TEST(Backbone, ZeroImageGivesZeroFeatures) {
  DetectorModel m(BackboneConfig{}, 2);
  for (const auto& tap : m.backbone.forward(Tensor::zeros({3, 32, 32}))) {
    for (double v : tap.values.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backbone, DeterministicForSeedAndImage) {
  DetectorModel a(BackboneConfig{}, 3), b(BackboneConfig{}, 3);
  auto ta = a.backbone.forward(random_image(4));
  auto tb = b.backbone.forward(random_image(4));
  for (std::size_t i = 0; i < 5; ++i) {
    auto da = ta[i].values.data(), db = tb[i].values.data();
    EXPECT_TRUE(std::equal(da.begin(), da.end(), db.begin()));
  }
}

TEST(Backbone, SideMustBeMultipleOf16) {
  DetectorModel m(BackboneConfig{}, 1);
  EXPECT_THROW(m.backbone.forward(random_image(1, 24)), ConfigError);
  EXPECT_NO_THROW(m.backbone.forward(random_image(1, 16)));
}

TEST(Backbone, InvalidConfigRejected) {
  BackboneConfig c;
  c.stage_channels[2] = 0;
  EXPECT_THROW(DetectorModel(c, 1), ConfigError);
  BackboneConfig d;
  d.convs_per_stage = 0;
  EXPECT_THROW(DetectorModel(d, 1), ConfigError);
}

TEST(Init, KaimingUniformZeroBiasIdentityNorm) {
  DetectorModel m(BackboneConfig{}, 5);
  for (auto& p : m.parameters()) {
    auto d = p.tensor.data();
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
      for (double v : d) EXPECT_EQ(v, 0.0) << p.name;
    } else if (p.name.ends_with(".gamma")) {
      for (double v : d) EXPECT_EQ(v, 1.0) << p.name;
    } else {
      const auto& s = p.tensor.shape();
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double v : d) EXPECT_LE(std::abs(v), bound) << p.name;
    }
  }
}

TEST(ScaHead, OutputIsOneProbabilityPerChannel) {
  for (std::size_t c : {8u, 64u}) {
    std::mt19937_64 rng(6);
    ScaHead head(c, rng);
    Tensor p = head.forward(random_feature(7, {c, 4, 4}), 1.0);
    EXPECT_EQ(p.shape(), (Shape{c, 1}));
    for (double v : p.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(ScaHead, GrlReversesBackboneGradient) {
  DetectorModel m(BackboneConfig{}, 8);
  const Tensor img = random_image(9);
  for (std::size_t stage : {0u, 4u}) {
    for (double lambda : {0.5, 1.0, 2.0}) {
      clear(m);
      backward(sca_loss_stage(m.sca[stage].forward(m.backbone.forward(img)[stage].values, lambda), DomainLabel::target()));
      auto with = backbone_grads(m);
      clear(m);
      backward(sca_loss_stage(m.sca[stage].forward(m.backbone.forward(img)[stage].values, std::nullopt),
                              DomainLabel::target()));
      auto without = backbone_grads(m);
      ASSERT_EQ(with.size(), without.size());
      double nonzero = 0;
      for (std::size_t i = 0; i < with.size(); ++i) {
        EXPECT_NEAR(with[i], -lambda * without[i], 1e-12 * std::max(1.0, std::abs(without[i])));
        nonzero += std::abs(without[i]);
      }
      EXPECT_GT(nonzero, 0.0);
    }
  }
}

TEST(ZeroLambda, AlignmentHeadsNeverReachBackbone) {
  DetectorModel m(BackboneConfig{}, 10);
  const Tensor img = random_image(11);
  const ObjectLabel truth{1, {0.5, 0.4, 0.3, 0.2}};
  auto det_only = [&] {
    auto taps = m.backbone.forward(img);
    auto [c, l] = detection_loss(m.det.forward(taps.back().values), truth);
    return std::pair{taps, add(c, l)};
  };
  clear(m);
  backward(det_only().second);
  auto reference = backbone_grads(m);

  clear(m);
  auto [taps, loss] = det_only();
  for (std::size_t r = 0; r < kNumStages; ++r) {
    loss = add(loss, sca_loss_stage(m.sca[r].forward(taps[r].values, 0.0), DomainLabel::source()));
  }
  loss = add(loss, rdc_loss(m.rdc.forward(taps.back().values, 0.0), DomainLabel::source()));
  backward(loss);
  EXPECT_EQ(backbone_grads(m), reference);
}

TEST(RpnHead, SameSpatialSizeProbabilities) {
  std::mt19937_64 rng(12);
  RpnHead head(64, rng);
  Tensor o = head.forward(random_feature(13, {64, 2, 3}));
  EXPECT_EQ(o.shape(), (Shape{2, 3}));
  for (double v : o.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(RdcHead, ChannelHalvingAndSpatialSize) {
  std::mt19937_64 rng(14);
  RdcHead head(64, rng);
  EXPECT_EQ(head.convs[0].weight.shape(), (Shape{32, 64, 3, 3}));
  EXPECT_EQ(head.convs[1].weight.shape(), (Shape{16, 32, 3, 3}));
  EXPECT_EQ(head.convs[2].weight.shape(), (Shape{8, 16, 3, 3}));
  EXPECT_EQ(head.score.weight.shape(), (Shape{1, 8, 1, 1}));
  Tensor o = head.forward(random_feature(15, {64, 2, 2}), 1.0);
  EXPECT_EQ(o.shape(), (Shape{2, 2}));
  for (double v : o.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(RdcHead, ChannelsMustDivideByEight) {
  std::mt19937_64 rng(16);
  EXPECT_THROW(RdcHead(12, rng), ConfigError);
}

TEST(RdcHead, GrlSignContract) {
  std::mt19937_64 rng(17);
  RdcHead head(16, rng);
  for (double lambda : {0.3, 1.0}) {
    Tensor a = random_feature(18, {16, 2, 2});
    a.set_requires_grad(true);
    Tensor b = random_feature(18, {16, 2, 2});
    b.set_requires_grad(true);
    backward(rdc_loss(head.forward(a, lambda), DomainLabel::target()));
    backward(rdc_loss(head.forward(b, std::nullopt), DomainLabel::target()));
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.grad()[i], -lambda * b.grad()[i], 1e-15);
  }
}

TEST(DetectionHead, ShapesAndSoftmax) {
  std::mt19937_64 rng(19);
  DetectionHead head(64, rng);
  Detection d = head.forward(random_feature(20, {64, 2, 2}));
  EXPECT_EQ(d.class_logits.numel(), 3u);
  EXPECT_EQ(d.box.numel(), 4u);
  double z = 0;
  for (double v : d.class_logits.data()) z += std::exp(v);
  double total = 0;
  for (double v : d.class_logits.data()) total += std::exp(v) / z;
  EXPECT_NEAR(total, 1.0, 1e-9);
  for (double v : d.box.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0);
  }
}

TEST(DetectionLoss, UniformLogitsGiveLogThree) {
  Detection d{Tensor::from({3}, {0.2, 0.2, 0.2}), Tensor::from({4}, {0.5, 0.5, 0.2, 0.2})};
  auto [cls, loc] = detection_loss(d, ObjectLabel{2, {0.5, 0.5, 0.2, 0.2}});
  EXPECT_NEAR(cls.item(), std::log(3.0), 1e-12);
  EXPECT_EQ(loc.item(), 0.0);
}

TEST(DetectionLoss, HalfBoxErrorGivesOneEighth) {
  Detection d{Tensor::from({3}, {5.0, 0.0, 0.0}), Tensor::from({4}, {0.5, 0.5, 0.2, 0.2})};
  auto [cls, loc] = detection_loss(d, ObjectLabel{0, {0.0, 0.5, 0.2, 0.2}});
  EXPECT_DOUBLE_EQ(loc.item(), 0.125);
  EXPECT_NEAR(cls.item(), -std::log(std::exp(5.0) / (std::exp(5.0) + 2.0)), 1e-12);
}

TEST(DetectionLoss, MissingTruthThrows) {
  Detection d{Tensor::zeros({3}), Tensor::zeros({4})};
  EXPECT_THROW(detection_loss(d, std::nullopt), ContractError);
}

TEST(Objectness, CentreCellTarget) {
  ObjectLabel t{0, {0.9, 0.1, 0.2, 0.2}};
  EXPECT_EQ(center_cell(t, 2, 2), 1u);
  Tensor target = objectness_target(t, 2, 2);
  EXPECT_EQ(target.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(target.data().begin(), target.data().end()), (std::vector<double>{0, 1, 0, 0}));
  EXPECT_EQ(center_cell(ObjectLabel{0, {1.0, 1.0, 0.1, 0.1}}, 2, 2), 3u);
}

TEST(Model, ParameterCountIsFixedByConfig) {
  DetectorModel a(BackboneConfig{}, 1), b(BackboneConfig{}, 99);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  BackboneConfig small;
  small.stage_channels = {8, 8, 8, 8, 8};
  EXPECT_LT(DetectorModel(small, 1).parameter_count(), a.parameter_count());
  // Stage 1 convs: 3->8 and 8->8 with biases.
  auto params = a.parameters();
  EXPECT_EQ(params[0].tensor.numel(), 8u * 3 * 9);
  EXPECT_EQ(params[1].tensor.numel(), 8u);
}

TEST(Model, DecayFlagOnlyOnWeights) {
  DetectorModel m(BackboneConfig{}, 1);
  for (auto& p : m.parameters()) EXPECT_EQ(p.decay, p.name.ends_with(".weight")) << p.name;
}

TEST(Model, HeadsAreDeterministic) {
  DetectorModel m(BackboneConfig{}, 21);
  Tensor f = random_feature(22, {64, 2, 2});
  auto a = m.rdc.forward(f, 1.0), b = m.rdc.forward(f, 1.0);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  auto da = m.det.forward(f), db = m.det.forward(f);
  EXPECT_TRUE(std::equal(da.box.data().begin(), da.box.data().end(), db.box.data().begin()));
}

TEST(Checkpoint, SaveLoadForwardIsBitIdentical) {
  DetectorModel m(BackboneConfig{}, 23);
  // Perturb running stats so buffers are exercised.
  m.sca[2].forward(m.backbone.forward(random_image(24))[2].values, 1.0, NormMode::Train);
  const auto path = temp_path("ckpt.txt");
  m.save(path);
  DetectorModel l = DetectorModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(l.config(), m.config());
  auto pm = m.parameters(), pl = l.parameters();
  ASSERT_EQ(pm.size(), pl.size());
  for (std::size_t i = 0; i < pm.size(); ++i) {
    EXPECT_EQ(pm[i].name, pl[i].name);
    auto a = pm[i].tensor.data(), b = pl[i].tensor.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << pm[i].name;
  }
  auto bm = m.buffers(), bl = l.buffers();
  for (std::size_t i = 0; i < bm.size(); ++i) EXPECT_EQ(*bm[i].second, *bl[i].second);
  const Tensor img = random_image(25);
  auto fm = m.det.forward(m.backbone.forward(img).back().values);
  auto fl = l.det.forward(l.backbone.forward(img).back().values);
  EXPECT_TRUE(std::equal(fm.class_logits.data().begin(), fm.class_logits.data().end(), fl.class_logits.data().begin()));
  auto em = m.sca[2].forward(m.backbone.forward(img)[2].values, std::nullopt, NormMode::Eval);
  auto el = l.sca[2].forward(l.backbone.forward(img)[2].values, std::nullopt, NormMode::Eval);
  EXPECT_TRUE(std::equal(em.data().begin(), em.data().end(), el.data().begin()));
}

TEST(Checkpoint, CorruptFilesRejected) {
  DetectorModel m(BackboneConfig{}, 26);
  const auto path = temp_path("bad.txt");
  m.save(path);
  std::string text;
  {
    std::ifstream is(path);
    text.assign(std::istreambuf_iterator<char>(is), {});
  }
  {
    std::ofstream os(path);
    os << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(DetectorModel::load(path), IoError);
  {
    std::ofstream os(path);
    os << "not a checkpoint\n";
  }
  EXPECT_THROW(DetectorModel::load(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(DetectorModel::load(path), IoError);
}

TEST(Model, DeepCopyIsIndependent) {
  DetectorModel m(BackboneConfig{}, 27);
  DetectorModel c = m.deep_copy();
  c.det.fc.weight.mutable_data()[0] += 1.0;
  EXPECT_NE(c.det.fc.weight[0], m.det.fc.weight[0]);
  EXPECT_EQ(c.det.fc.weight[1], m.det.fc.weight[1]);
}
