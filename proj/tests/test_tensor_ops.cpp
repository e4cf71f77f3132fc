#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "cwda/errors.hpp"
#include "cwda/grad_check.hpp"
#include "cwda/ops.hpp"
#include "cwda/tensor.hpp"

using namespace cwda;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Central difference of a scalar function of one entry.
double numeric_partial(const std::function<double()>& f, double& slot, double h = 1e-5) {
  const double orig = slot;
  slot = orig + h;
  const double up = f();
  slot = orig - h;
  const double down = f();
  slot = orig;
  return (up - down) / (2 * h);
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, NoGradTensorNeverAccumulates) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor c = Tensor::from({3}, {4, 5, 6});
  backward(sum(mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Tensor, GradHasDataShape) {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(square(x)));
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Pointwise, SigmoidOfZeroIsHalf) { EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Pointwise, AddZeroIsIdentity) {
  Tensor x = Tensor::from({4}, uniform(4, 1));
  Tensor y = add(x, Tensor::zeros({4}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Pointwise, MulGradientMatchesFiniteDifference) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = Tensor::scalar(5.0, true);
  backward(mul(x, y));
  NoGradGuard guard;
  auto f = [&] { return mul(x, y).item(); };
  const double fd = numeric_partial(f, x.mutable_data()[0]);
  EXPECT_NEAR(x.grad()[0], fd, 1e-8);
  EXPECT_EQ(x.grad()[0], 5.0);
}

TEST(Pointwise, ShapeMismatchReportsBothShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(3, 2)"), std::string::npos) << msg;
  }
}

TEST(Pointwise, DispatchCoversEveryKind) {
  Tensor a = Tensor::from({2}, {0.5, 2.0});
  Tensor b = Tensor::from({2}, {3.0, -1.0});
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Add, a, b)[0], 3.5);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Sub, a, b)[1], 3.0);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Mul, a, b)[1], -2.0);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Scale, a, std::nullopt, 4.0)[0], 2.0);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Relu, b)[1], 0.0);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Log, a)[1], std::log(2.0));
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Exp, a)[0], std::exp(0.5));
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Square, b)[0], 9.0);
  EXPECT_DOUBLE_EQ(pointwise(PointwiseKind::Sigmoid, b)[0], 1.0 / (1.0 + std::exp(-3.0)));
  EXPECT_THROW(pointwise(PointwiseKind::Add, a), ContractError);
}

TEST(Pointwise, ScalarBroadcastsOnEitherSide) {
  Tensor a = Tensor::from({3}, {1, 2, 3}, true);
  Tensor s = Tensor::scalar(2.0, true);
  Tensor left = mul(s, a);
  Tensor right = mul(a, s);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(left[i], right[i]);
  backward(sum(left));
  EXPECT_DOUBLE_EQ(s.grad()[0], 6.0);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a = Tensor::from({3, 3}, uniform(9, 2));
  Tensor p = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p[i], a[i]);
}

TEST(Matmul, MatchesTripleLoop) {
  auto av = uniform(12, 3), bv = uniform(8, 4);
  Tensor c = matmul(Tensor::from({3, 4}, av), Tensor::from({4, 2}, bv));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += av[i * 4 + k] * bv[k * 2 + j];
      EXPECT_NEAR(c[i * 2 + j], s, 1e-12);
    }
  }
}

TEST(Matmul, ZeroProductIsZero) {
  Tensor c = matmul(Tensor::zeros({2, 3}), Tensor::from({3, 2}, uniform(6, 5)));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, InnerMismatchThrows) { EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError); }

TEST(Matmul, BackwardRule) {
  auto av = uniform(6, 6), bv = uniform(6, 7), gv = uniform(4, 8);
  Tensor a = Tensor::from({2, 3}, av, true);
  Tensor b = Tensor::from({3, 2}, bv, true);
  Tensor g = Tensor::from({2, 2}, gv);
  backward(sum(mul(matmul(a, b), g)));
  // grad_a = g * b^T, grad_b = a^T * g
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < 2; ++j) s += gv[i * 2 + j] * bv[k * 2 + j];
      EXPECT_NEAR(a.grad()[i * 3 + k], s, 1e-12);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 2; ++i) s += av[i * 3 + k] * gv[i * 2 + j];
      EXPECT_NEAR(b.grad()[k * 2 + j], s, 1e-12);
    }
  }
}

namespace {

std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                                const std::vector<double>& k, std::size_t cout) {
  std::vector<double> out(cout * h * w, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = 0;
        for (std::size_t c = 0; c < cin; ++c)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
              s += x[(c * h + sy) * w + sx] * k[((o * cin + c) * 3 + (dy + 1)) * 3 + (dx + 1)];
            }
        out[(o * h + y) * w + xx] = s;
      }
  return out;
}

}  // namespace

TEST(Conv2d, ImpulseWithOnesKernelGivesBlock) {
  std::vector<double> img(25, 0.0);
  img[2 * 5 + 2] = 1.0;
  Tensor out = conv2d(Tensor::from({1, 5, 5}, img), Tensor::full({1, 1, 3, 3}, 1.0));
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const bool inside = y >= 1 && y <= 3 && x >= 1 && x <= 3;
      EXPECT_EQ(out[y * 5 + x], inside ? 1.0 : 0.0);
    }
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  auto x = uniform(2 * 5 * 5, 9), k = uniform(3 * 2 * 9, 10);
  Tensor out = conv2d(Tensor::from({2, 5, 5}, x), Tensor::from({3, 2, 3, 3}, k));
  auto ref = conv_oracle(x, 2, 5, 5, k, 3);
  ASSERT_EQ(out.shape(), (Shape{3, 5, 5}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-10);
}

TEST(Conv2d, SmallMapsMatchOracleToo) {
  for (std::size_t side : {1, 2, 4, 7, 16}) {
    auto x = uniform(4 * side * side, 11 + side), k = uniform(5 * 4 * 9, 12 + side);
    Tensor out = conv2d(Tensor::from({4, side, side}, x), Tensor::from({5, 4, 3, 3}, k));
    auto ref = conv_oracle(x, 4, side, side, k, 5);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-10) << side;
  }
}

TEST(Conv2d, ZeroKernelGivesZero) {
  Tensor out = conv2d(Tensor::from({2, 4, 4}, uniform(32, 13)), Tensor::zeros({3, 2, 3, 3}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 1, 3, 3})), DimensionError);
}

TEST(MaxPool2, PicksWindowMax) {
  Tensor out = max_pool2(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 4.0);
}

TEST(MaxPool2, ConstantMapHalvesResolution) {
  Tensor out = max_pool2(Tensor::full({2, 4, 6}, 0.7));
  EXPECT_EQ(out.shape(), (Shape{2, 2, 3}));
  for (double v : out.data()) EXPECT_EQ(v, 0.7);
}

TEST(MaxPool2, MatchesBruteForce) {
  auto v = uniform(36, 14);
  Tensor out = max_pool2(Tensor::from({1, 6, 6}, v));
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) {
      double m = -1e300;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, v[(2 * y + dy) * 6 + 2 * x + dx]);
      EXPECT_EQ(out[y * 3 + x], m);
    }
}

TEST(MaxPool2, TiesRouteToFirstOccurrence) {
  Tensor x = Tensor::full({1, 2, 2}, 1.0, true);
  backward(sum(max_pool2(x)));
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool2, TooSmallThrows) { EXPECT_THROW(max_pool2(Tensor::zeros({1, 1, 4})), DimensionError); }

TEST(GlobalAvgPool, ConstantChannels) {
  std::vector<double> v;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i) v.push_back(c);
  Tensor out = global_avg_pool(Tensor::from({3, 2, 2}, v));
  EXPECT_EQ(out.shape(), (Shape{3, 1}));
  for (int c = 0; c < 3; ++c) EXPECT_EQ(out[c], c);
}

TEST(GlobalAvgPool, SinglePixelIsIdentity) {
  auto v = uniform(5, 15);
  Tensor out = global_avg_pool(Tensor::from({5, 1, 1}, v));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(out[i], v[i]);
}

TEST(GlobalAvgPool, MatchesMeanOracleAndSpreadsGradient) {
  auto v = uniform(36, 16);
  Tensor x = Tensor::from({4, 3, 3}, v, true);
  Tensor out = global_avg_pool(x);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 9; ++i) s += v[c * 9 + i];
    EXPECT_NEAR(out[c], s / 9.0, 1e-12);
  }
  backward(sum(out));
  for (double g : x.grad()) EXPECT_NEAR(g, 1.0 / 9.0, 1e-15);
}

TEST(BatchNorm, StandardizedChannelIsNearlyUnchanged) {
  // Zero mean, unit (population) variance.
  std::vector<double> v{-1.5, -0.5, 0.5, 1.5};
  const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0);
  for (auto& x : v) x /= sd;
  auto stats = RunningStats::identity(1);
  Tensor out = batch_norm(Tensor::from({1, 2, 2}, v), Tensor::full({1}, 1.0), Tensor::zeros({1}), NormMode::Train,
                          stats);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(out[i], v[i] / std::sqrt(1.0 + 1e-5), 1e-12);
    EXPECT_NEAR(out[i], v[i], 1e-5);
  }
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  auto stats = RunningStats::identity(2);
  Tensor out = batch_norm(Tensor::from({2, 2, 2}, uniform(8, 17)), Tensor::zeros({2}),
                          Tensor::from({2}, {0.25, -3.0}), NormMode::Train, stats);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], 0.25);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(out[i], -3.0);
}

TEST(BatchNorm, OutputMomentsAreStandard) {
  // Large spread keeps eps negligible against the variance.
  auto v = uniform(3 * 16, 18, -50, 50);
  auto stats = RunningStats::identity(3);
  Tensor out = batch_norm(Tensor::from({3, 4, 4}, v), Tensor::full({3}, 1.0), Tensor::zeros({3}), NormMode::Train,
                          stats);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, s = 0;
    for (std::size_t i = 0; i < 16; ++i) m += out[c * 16 + i];
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) s += (out[c * 16 + i] - m) * (out[c * 16 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(s / 16, 1.0, 1e-6);
  }
}

TEST(BatchNorm, RunningStatsUpdateAndEvalUsesThem) {
  std::vector<double> v{1, 2, 3, 6};
  auto stats = RunningStats::identity(1);
  batch_norm(Tensor::from({1, 2, 2}, v), Tensor::full({1}, 1.0), Tensor::zeros({1}), NormMode::Train, stats);
  const double mu = 3.0, unbiased = (4 + 1 + 0 + 9) / 3.0;
  EXPECT_NEAR(stats.mean[0], 0.1 * mu, 1e-15);
  EXPECT_NEAR(stats.var[0], 0.9 + 0.1 * unbiased, 1e-15);
  Tensor e = batch_norm(Tensor::from({1, 1, 1}, {2.0}), Tensor::full({1}, 1.0), Tensor::zeros({1}), NormMode::Eval,
                        stats);
  EXPECT_NEAR(e[0], (2.0 - stats.mean[0]) / std::sqrt(stats.var[0] + 1e-5), 1e-15);
}

TEST(BatchNorm, SinglePositionTrainThrows) {
  auto stats = RunningStats::identity(1);
  EXPECT_THROW(batch_norm(Tensor::zeros({1, 1, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1}), NormMode::Train, stats),
               DegenerateStatisticsError);
}

TEST(Grl, ForwardIsBitIdentical) {
  auto v = uniform(7, 19);
  Tensor y = grl(Tensor::from({7}, v, true), 0.37);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(y[i], v[i]);
}

TEST(Grl, BackwardNegatesAndScales) {
  Tensor x = Tensor::scalar(2.0, true);
  backward(grl(x, 1.0));
  EXPECT_EQ(x.grad()[0], -1.0);

  Tensor z = Tensor::from({3}, {1, 2, 3}, true);
  Tensor up = Tensor::from({3}, {0.5, -2.0, 4.0});
  backward(sum(mul(grl(z, 0.25), up)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z.grad()[i], -0.25 * up[i]);
}

TEST(Grl, ZeroLambdaDetaches) {
  Tensor x = Tensor::scalar(2.0, true);
  backward(grl(x, 0.0));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Grl, NegativeLambdaThrows) { EXPECT_THROW(grl(Tensor::scalar(1.0), -0.5), ParameterError); }

TEST(Backward, NonScalarLossThrows) { EXPECT_THROW(backward(Tensor::zeros({2}, true)), ContractError); }

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({2, 3}, uniform(6, 20), true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesX) {
  auto v = uniform(5, 21);
  Tensor x = Tensor::from({5}, v, true);
  backward(scale(sum(square(x)), 0.5));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], v[i]);
}

TEST(Backward, FanOutAccumulatesExactly) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor up = Tensor::from({3}, {0.1, 0.7, -3.3});
  backward(sum(mul(add(x, x), up)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 2.0 * up[i]);
}

TEST(Backward, VisitsEveryNodeOnce) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor a = square(x);
  Tensor b = add(a, a);
  Tensor loss = sum(add(b, a));
  auto order = topological_order(loss);
  std::set<detail::Node*> seen(order.begin(), order.end());
  EXPECT_EQ(seen.size(), order.size());
  // Parents come before children.
  for (std::size_t i = 0; i < order.size(); ++i)
    for (auto& p : order[i]->parents) {
      auto pos = std::find(order.begin(), order.end(), p.get()) - order.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i);
    }
  backward(loss);
  EXPECT_EQ(x.grad(), (std::vector<double>{6, 12}));
}

TEST(Backward, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    Tensor x = Tensor::from({2, 4, 4}, uniform(32, 22), true);
    Tensor k = Tensor::from({3, 2, 3, 3}, uniform(54, 23), true);
    backward(sum(sigmoid(conv2d(x, k))));
    auto g = x.grad();
    auto gk = k.grad();
    g.insert(g.end(), gk.begin(), gk.end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  Tensor x = Tensor::from({2, 4, 4}, uniform(32, 24), true);
  Tensor k = Tensor::from({3, 2, 3, 3}, uniform(54, 25, -0.5, 0.5), true);
  Tensor gamma = Tensor::from({3}, {1.0, 0.8, 1.2}, true);
  Tensor beta = Tensor::from({3}, {0.1, -0.2, 0.0}, true);
  Tensor wmat = Tensor::from({2, 3}, uniform(6, 26), true);
  auto stats = RunningStats::identity(3);
  auto f = [&] {
    Tensor h = batch_norm(conv2d(x, k), gamma, beta, NormMode::Train, stats);
    h = max_pool2(sigmoid(h));
    Tensor p = global_avg_pool(h);
    Tensor logits = matmul(wmat, p);
    Tensor l = scale(slice(log_softmax(reshape(logits, {2})), 0, 1), -1.0);
    return add(l, mul(sum(exp(scale(p, 0.1))), Tensor::scalar(0.01)));
  };
  auto report = grad_check(f, {{"x", x}, {"k", k}, {"gamma", gamma}, {"beta", beta}, {"w", wmat}});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(GradCheck, SigmoidMatmulPasses) {
  Tensor a = Tensor::from({3, 4}, uniform(12, 27), true);
  Tensor x = Tensor::from({4, 1}, uniform(4, 28), true);
  auto report = grad_check([&] { return sum(sigmoid(matmul(a, x))); }, {{"A", a}, {"x", x}}, 1e-5, 1e-4);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.grl_nodes, 0u);
}

TEST(GradCheck, GrlIsFlaggedAsIntentionalMismatch) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  auto report = grad_check([&] { return sum(grl(x, 1.0)); }, {{"x", x}});
  EXPECT_EQ(report.grl_nodes, 1u);
  EXPECT_TRUE(report.mismatch_expected());
  EXPECT_FALSE(report.passed);
  // analytic -1 against numeric +1
  EXPECT_NEAR(report.leaves[0].max_abs_error, 2.0, 1e-6);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  auto report = grad_check([&] { return add(sum(scale(x, 0.0)), Tensor::scalar(3.0)); }, {{"x", x}});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.leaves[0].max_abs_error, 0.0);
}

TEST(SmoothL1, Values) {
  Tensor t = Tensor::zeros({4});
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor::from({4}, {0.5, 0, 0, 0}), t).item(), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor::from({4}, {0, -2.0, 0, 0}), t).item(), 1.5);
  EXPECT_EQ(smooth_l1(t, t).item(), 0.0);
}

TEST(LogSoftmax, UniformLogitsGiveLogThree) {
  Tensor ls = log_softmax(Tensor::from({3}, {0.4, 0.4, 0.4}));
  for (double v : ls.data()) EXPECT_NEAR(-v, std::log(3.0), 1e-15);
  Tensor big = log_softmax(Tensor::from({3}, {1000.0, 0.0, -1000.0}));
  EXPECT_TRUE(std::isfinite(big[2]));
}

TEST(NoGrad, GuardStopsRecording) {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor y;
  {
    NoGradGuard g;
    y = square(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_recording_enabled());
}
