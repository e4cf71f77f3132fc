#include "cwda/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "cwda/alignment.hpp"
#include "cwda/grad_check.hpp"
#include "cwda/model.hpp"
#include "cwda/ops.hpp"
#include "cwda/trainer.hpp"

namespace cwda {

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Uniform values whose magnitude stays at least `gap` away from zero, so
// kinks (relu, clamp, smooth-L1) never fall inside a difference stencil.
Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = u(rng);
    } while (std::abs(x) < gap);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Distinct values spaced by at least 0.005 in random order, so every pooling
// window has a clear maximum.
Tensor spaced_leaf(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  std::uniform_real_distribution<double> jitter(0.0, 0.004);
  for (auto& x : v) x = x * 0.01 - 0.3 + jitter(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor constant(Rng& rng, Shape shape) {
  Tensor t = random_leaf(rng, std::move(shape));
  t.set_requires_grad(false);
  return t;
}

// True when some relu input sits within `margin` of its kink, or a whole
// layer is dead, either of which makes a difference stencil meaningless.
bool near_kink(const Tensor& pre, double margin = 1e-3) {
  bool alive = false;
  for (double v : pre.data()) {
    if (std::abs(v) < margin) return true;
    alive = alive || v > 0.0;
  }
  return !alive;
}

bool rdc_degenerate(const RdcHead& head, const Tensor& x) {
  NoGradGuard no_grad;
  Tensor h = x;
  for (const auto& conv : head.convs) {
    Tensor pre = conv.forward(h);
    if (near_kink(pre)) return true;
    h = relu(pre);
  }
  return false;
}

// Reduces any output to a scalar through fixed random weights, so every
// output entry gets a distinct upstream gradient.
Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

Tensor probabilities(Rng& rng, Shape shape) {
  Tensor t = random_leaf(rng, std::move(shape), 0.05, 0.95);
  return t;
}

struct Trial {
  std::function<Tensor()> f;
  std::vector<NamedLeaf> leaves;
};

using TrialFactory = std::function<Trial(Rng&)>;

Trial unary_case(Rng& rng, const std::function<Tensor(const Tensor&)>& op, double lo, double hi, double gap) {
  Shape shape{pick(rng, 1, 3), pick(rng, 1, 4)};
  Tensor x = random_leaf(rng, shape, lo, hi, gap);
  Tensor w = constant(rng, shape);
  return {[=] { return project(op(x), w); }, {{"x", x}}};
}

Trial binary_case(Rng& rng, const std::function<Tensor(const Tensor&, const Tensor&)>& op, bool scalar_b) {
  Shape shape{pick(rng, 1, 3), pick(rng, 2, 4)};
  Tensor a = random_leaf(rng, shape);
  Tensor b = scalar_b ? random_leaf(rng, {1}) : random_leaf(rng, shape);
  Tensor w = constant(rng, shape);
  return {[=] { return project(op(a, b), w); }, {{"a", a}, {"b", b}}};
}

std::vector<std::pair<std::string, TrialFactory>> cases() {
  std::vector<std::pair<std::string, TrialFactory>> c;
  c.emplace_back("add", [](Rng& r) { return binary_case(r, add, false); });
  c.emplace_back("add_broadcast", [](Rng& r) { return binary_case(r, add, true); });
  c.emplace_back("sub", [](Rng& r) { return binary_case(r, sub, false); });
  c.emplace_back("mul", [](Rng& r) { return binary_case(r, mul, false); });
  c.emplace_back("mul_broadcast", [](Rng& r) { return binary_case(r, mul, true); });
  c.emplace_back("scale", [](Rng& r) { return unary_case(r, [](const Tensor& x) { return scale(x, -1.7); }, -1, 1, 0); });
  c.emplace_back("add_constant",
                 [](Rng& r) { return unary_case(r, [](const Tensor& x) { return add_constant(x, 0.3); }, -1, 1, 0); });
  c.emplace_back("rsub", [](Rng& r) { return unary_case(r, [](const Tensor& x) { return rsub(1.0, x); }, -1, 1, 0); });
  c.emplace_back("relu", [](Rng& r) { return unary_case(r, relu, -1, 1, 1e-2); });
  c.emplace_back("sigmoid", [](Rng& r) { return unary_case(r, sigmoid, -4, 4, 0); });
  c.emplace_back("log", [](Rng& r) { return unary_case(r, log, 0.2, 2, 0); });
  c.emplace_back("exp", [](Rng& r) { return unary_case(r, exp, -2, 2, 0); });
  c.emplace_back("square", [](Rng& r) { return unary_case(r, square, -2, 2, 0); });
  c.emplace_back("clamp", [](Rng& r) {
    return unary_case(
        r,
        [](const Tensor& x) { return clamp(x, -0.5, 0.5); },
        -1, 1, 0);
  });
  c.emplace_back("pointwise_dispatch", [](Rng& r) {
    Shape shape{pick(r, 2, 5)};
    Tensor a = random_leaf(r, shape, 0.2, 1.5);
    Tensor b = random_leaf(r, shape);
    Tensor w = constant(r, shape);
    return Trial{[=] {
                   Tensor t = pointwise(PointwiseKind::Mul, pointwise(PointwiseKind::Log, a), b);
                   t = pointwise(PointwiseKind::Scale, pointwise(PointwiseKind::Sigmoid, t), std::nullopt, 2.0);
                   return project(t, w);
                 },
                 {{"a", a}, {"b", b}}};
  });
  c.emplace_back("sum_mean", [](Rng& r) {
    Tensor x = random_leaf(r, {pick(r, 1, 4), pick(r, 1, 4)});
    return Trial{[=] { return add(scale(sum(square(x)), 0.5), mean(x)); }, {{"x", x}}};
  });
  c.emplace_back("reshape_slice", [](Rng& r) {
    const std::size_t rows = pick(r, 2, 4), cols = pick(r, 2, 4);
    Tensor x = random_leaf(r, {rows, cols});
    const std::size_t off = pick(r, 0, rows * cols - 2);
    const std::size_t cnt = pick(r, 1, rows * cols - off);
    Tensor w = constant(r, {cnt});
    return Trial{[=] { return project(slice(reshape(x, {cols, rows}), off, cnt), w); }, {{"x", x}}};
  });
  c.emplace_back("matmul", [](Rng& r) {
    const std::size_t m = pick(r, 1, 4), k = pick(r, 1, 5), n = pick(r, 1, 4);
    Tensor a = random_leaf(r, {m, k});
    Tensor b = random_leaf(r, {k, n});
    Tensor w = constant(r, {m, n});
    return Trial{[=] { return project(matmul(a, b), w); }, {{"a", a}, {"b", b}}};
  });
  c.emplace_back("transpose", [](Rng& r) {
    const std::size_t m = pick(r, 1, 4), n = pick(r, 1, 4);
    Tensor a = random_leaf(r, {m, n});
    Tensor w = constant(r, {n, m});
    return Trial{[=] { return project(transpose(a), w); }, {{"a", a}}};
  });
  c.emplace_back("conv2d", [](Rng& r) {
    const std::size_t cin = pick(r, 1, 3), cout = pick(r, 1, 3), k = pick(r, 0, 1) ? 3 : 1;
    // Both the wide (channel-major) and the narrow (patch-major) layouts.
    const std::size_t side = pick(r, 0, 1) ? pick(r, 1, 4) : pick(r, 8, 10);
    Tensor x = random_leaf(r, {cin, side, side});
    Tensor kern = random_leaf(r, {cout, cin, k, k});
    Tensor bias = random_leaf(r, {cout});
    Tensor w = constant(r, {cout, side, side});
    return Trial{[=] { return project(conv2d(x, kern, bias), w); }, {{"input", x}, {"kernel", kern}, {"bias", bias}}};
  });
  c.emplace_back("max_pool2", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 2), h = 2 * pick(r, 1, 3), w = 2 * pick(r, 1, 3);
    Tensor x = spaced_leaf(r, {ch, h, w});
    Tensor wt = constant(r, {ch, h / 2, w / 2});
    return Trial{[=] { return project(max_pool2(x), wt); }, {{"x", x}}};
  });
  c.emplace_back("global_avg_pool", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 4);
    Tensor x = random_leaf(r, {ch, pick(r, 1, 3), pick(r, 1, 3)});
    Tensor w = constant(r, {ch, 1});
    return Trial{[=] { return project(global_avg_pool(x), w); }, {{"x", x}}};
  });
  c.emplace_back("batch_norm", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 3), side = pick(r, 2, 3);
    Tensor x = random_leaf(r, {ch, side, side}, -2, 2);
    Tensor gamma = random_leaf(r, {ch}, 0.5, 1.5);
    Tensor beta = random_leaf(r, {ch});
    Tensor w = constant(r, {ch, side, side});
    auto stats = std::make_shared<RunningStats>(RunningStats::identity(ch));
    return Trial{[=] { return project(batch_norm(x, gamma, beta, NormMode::Train, *stats), w); },
                 {{"x", x}, {"gamma", gamma}, {"beta", beta}}};
  });
  c.emplace_back("batch_norm_eval", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 3);
    Tensor x = random_leaf(r, {ch, 2, 2});
    Tensor gamma = random_leaf(r, {ch}, 0.5, 1.5);
    Tensor beta = random_leaf(r, {ch});
    Tensor w = constant(r, {ch, 2, 2});
    auto stats = std::make_shared<RunningStats>(RunningStats::identity(ch));
    for (std::size_t i = 0; i < ch; ++i) {
      stats->mean[i] = 0.1 * static_cast<double>(i);
      stats->var[i] = 0.5 + 0.2 * static_cast<double>(i);
    }
    return Trial{[=] { return project(batch_norm(x, gamma, beta, NormMode::Eval, *stats), w); },
                 {{"x", x}, {"gamma", gamma}, {"beta", beta}}};
  });
  c.emplace_back("log_softmax", [](Rng& r) {
    const std::size_t n = pick(r, 2, 5);
    Tensor x = random_leaf(r, {n}, -3, 3);
    Tensor w = constant(r, {n});
    return Trial{[=] { return project(log_softmax(x), w); }, {{"logits", x}}};
  });
  c.emplace_back("smooth_l1", [](Rng& r) {
    const std::size_t n = pick(r, 1, 5);
    Tensor target = constant(r, {n});
    // Differences on both sides of the transition, away from |d| = 1 and 0.
    std::uniform_real_distribution<double> mag(0.05, 0.9), big(1.1, 2.0);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (i % 2 ? big(r) : mag(r)) * (pick(r, 0, 1) ? 1.0 : -1.0);
      v[i] = target[i] + d;
    }
    Tensor pred = Tensor::from({n}, v, true);
    return Trial{[=] { return smooth_l1(pred, target); }, {{"prediction", pred}}};
  });
  c.emplace_back("sca_loss_stage", [](Rng& r) {
    Tensor p = probabilities(r, {pick(r, 1, 6), 1});
    const DomainLabel d(static_cast<int>(pick(r, 0, 1)));
    return Trial{[=] { return sca_loss_stage(p, d); }, {{"probs", p}}};
  });
  c.emplace_back("sca_loss_total", [](Rng& r) {
    Tensor a = probabilities(r, {3, 1});
    Tensor b = probabilities(r, {2, 1});
    return Trial{[=] {
                   return sca_loss_total({sca_loss_stage(a, DomainLabel::source()), sca_loss_stage(b, DomainLabel::target())});
                 },
                 {{"stage_a", a}, {"stage_b", b}}};
  });
  c.emplace_back("rdc_loss", [](Rng& r) {
    Tensor p = probabilities(r, {pick(r, 1, 3), pick(r, 1, 3)});
    const DomainLabel d(static_cast<int>(pick(r, 0, 1)));
    return Trial{[=] { return rdc_loss(p, d); }, {{"probs", p}}};
  });
  c.emplace_back("gram", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 4);
    Tensor x = random_leaf(r, {ch, pick(r, 1, 3), pick(r, 1, 3)});
    Tensor w = constant(r, {ch, ch});
    return Trial{[=] { return project(gram(x).g, w); }, {{"feature", x}}};
  });
  c.emplace_back("decay_gram", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 4);
    Tensor x = random_leaf(r, {ch, 2, pick(r, 1, 3)});
    Tensor w = constant(r, {ch, ch});
    return Trial{[=] { return project(decay_gram(x), w); }, {{"feature", x}}};
  });
  c.emplace_back("cca_loss", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 5), side = pick(r, 1, 3);
    Tensor s = random_leaf(r, {ch, side, side});
    Tensor t = random_leaf(r, {ch, side, side});
    return Trial{[=] { return cca_loss(s, t); }, {{"source", s}, {"target", t}}};
  });
  c.emplace_back("cca_loss_no_decay", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 5);
    Tensor s = random_leaf(r, {ch, 2, 2});
    Tensor t = random_leaf(r, {ch, 2, 2});
    return Trial{[=] { return cca_loss(s, t, false); }, {{"source", s}, {"target", t}}};
  });
  c.emplace_back("sca_head", [](Rng& r) {
    const std::size_t ch = 2 * pick(r, 1, 2);
    auto head = std::make_shared<ScaHead>(ch, r);
    Tensor x;
    for (bool redraw = true; redraw;) {
      x = random_leaf(r, {ch, 3, 3});
      NoGradGuard no_grad;
      redraw = near_kink(head->bn.forward(head->conv1.forward(x), NormMode::Train));
    }
    const DomainLabel d(static_cast<int>(pick(r, 0, 1)));
    return Trial{[=] { return sca_loss_stage(head->forward(x, std::nullopt), d); },
                 {{"feature", x},
                  {"conv1.weight", head->conv1.weight},
                  {"conv1.bias", head->conv1.bias},
                  {"bn.gamma", head->bn.gamma},
                  {"bn.beta", head->bn.beta},
                  {"conv2.weight", head->conv2.weight},
                  {"conv2.bias", head->conv2.bias}}};
  });
  c.emplace_back("rdc_head", [](Rng& r) {
    std::shared_ptr<RdcHead> head;
    Tensor x;
    do {
      head = std::make_shared<RdcHead>(8, r);
      x = random_leaf(r, {8, 2, 2});
    } while (rdc_degenerate(*head, x));
    const DomainLabel d(static_cast<int>(pick(r, 0, 1)));
    std::vector<NamedLeaf> leaves{{"feature", x}};
    for (std::size_t i = 0; i < head->convs.size(); ++i) {
      leaves.push_back({"conv" + std::to_string(i) + ".weight", head->convs[i].weight});
      leaves.push_back({"conv" + std::to_string(i) + ".bias", head->convs[i].bias});
    }
    leaves.push_back({"score.weight", head->score.weight});
    leaves.push_back({"score.bias", head->score.bias});
    return Trial{[=] { return rdc_loss(head->forward(x, std::nullopt), d); }, leaves};
  });
  c.emplace_back("cca_path", [](Rng& r) {
    // Stage-5 style maps produced by a conv, so the gradient crosses the
    // decay gram into trainable weights.
    auto conv = std::make_shared<ConvLayer>(ConvLayer::kaiming(2, 4, 3, r));
    Tensor s = constant(r, {2, 2, 2});
    Tensor t = constant(r, {2, 2, 2});
    return Trial{[=] { return cca_loss(conv->forward(s), conv->forward(t)); },
                 {{"conv.weight", conv->weight}, {"conv.bias", conv->bias}}};
  });
  c.emplace_back("detection_head", [](Rng& r) {
    const std::size_t ch = pick(r, 2, 6);
    auto head = std::make_shared<DetectionHead>(ch, r);
    Tensor x = random_leaf(r, {ch, 2, 2});
    ObjectLabel truth{static_cast<int>(pick(r, 0, kNumClasses - 1)), {0.4, 0.6, 0.3, 0.2}};
    return Trial{[=] {
                   auto [l_cls, l_loc] = detection_loss(head->forward(x), truth);
                   return add(l_cls, l_loc);
                 },
                 {{"feature", x}, {"fc.weight", head->fc.weight}, {"fc.bias", head->fc.bias}}};
  });
  c.emplace_back("rpn_head", [](Rng& r) {
    const std::size_t ch = pick(r, 1, 4);
    auto head = std::make_shared<RpnHead>(ch, r);
    Tensor x = random_leaf(r, {ch, 2, 2});
    ObjectLabel truth{0, {0.7, 0.2, 0.3, 0.3}};
    return Trial{[=] { return objectness_loss(head->forward(x), truth); },
                 {{"feature", x}, {"conv.weight", head->conv.weight}, {"conv.bias", head->conv.bias}}};
  });
  c.emplace_back("total_objective", [](Rng& r) {
    Tensor cls = random_leaf(r, {1}, 0.1, 2);
    Tensor loc = random_leaf(r, {1}, 0.1, 2);
    Tensor s1 = random_leaf(r, {1}, 0.1, 2);
    Tensor s5 = random_leaf(r, {1}, 0.1, 2);
    Tensor lc = random_leaf(r, {1}, 0.1, 2);
    Tensor lr = random_leaf(r, {1}, 0.1, 2);
    LossWeights weights{0.5, 2.0, 0.25};
    return Trial{[=] {
                   ObjectiveInputs in;
                   in.l_cls = cls;
                   in.l_loc = loc;
                   in.l_s_stage[0] = s1;
                   in.l_s_stage[4] = s5;
                   in.l_c = lc;
                   in.l_r = lr;
                   ModuleToggles on;
                   on.sca_stages = {true, false, false, false, true};
                   on.cca = on.rdc = true;
                   return total_objective(in, weights, on).total;
                 },
                 {{"l_cls", cls}, {"l_loc", loc}, {"l_s1", s1}, {"l_s5", s5}, {"l_c", lc}, {"l_r", lr}}};
  });
  return c;
}

// Gradient of a stand-in backbone conv's weights through a head, built once
// with and once without the GRL node.
std::vector<double> upstream_grad(const ConvLayer& backbone, const Tensor& input,
                                  const std::function<Tensor(const Tensor&)>& loss) {
  backbone.weight.node()->grad.clear();
  backward(loss(backbone.forward(input)));
  return backbone.weight.grad();
}

GrlCase grl_case(const std::string& name, double lambda, const ConvLayer& backbone, const Tensor& input,
                 const std::function<Tensor(const Tensor&, std::optional<double>)>& loss) {
  auto with = upstream_grad(backbone, input, [&](const Tensor& x) { return loss(x, lambda); });
  auto without = upstream_grad(backbone, input, [&](const Tensor& x) { return loss(x, std::nullopt); });
  GrlCase c{name, lambda};
  double reference = 0.0;
  for (std::size_t i = 0; i < with.size(); ++i) {
    c.max_abs_diff = std::max(c.max_abs_diff, std::abs(with[i] - (-lambda * without[i])));
    reference = std::max(reference, std::abs(lambda * without[i]));
  }
  // The reversal is one multiply, so only round-off may separate the graphs.
  c.passed = lambda == 0.0 ? c.max_abs_diff == 0.0
                           : reference > 0.0 && c.max_abs_diff <= 1e-12 * std::max(1.0, reference);
  return c;
}

}  // namespace

SuiteReport run_gradcheck_suite(const SuiteOptions& options) {
  SuiteReport report;
  report.tolerance = options.tolerance;
  Rng rng(options.seed);
  const auto all = cases();
  const std::size_t per_case =
      std::max(options.trials_per_case, (options.min_total_trials + all.size() - 1) / all.size());
  for (const auto& [name, factory] : all) {
    SuiteCase sc{name};
    for (std::size_t t = 0; t < per_case; ++t) {
      Trial trial = factory(rng);
      const GradCheckReport r = grad_check(trial.f, trial.leaves, 1e-5, options.tolerance);
      sc.max_rel_error = std::max(sc.max_rel_error, r.max_rel_error);
      sc.passed = sc.passed && r.passed && !r.mismatch_expected();
      ++sc.trials;
    }
    report.total_trials += sc.trials;
    report.max_rel_error = std::max(report.max_rel_error, sc.max_rel_error);
    report.passed = report.passed && sc.passed;
    report.cases.push_back(std::move(sc));
  }

  for (double lambda : {0.0, 0.3, 0.5, 1.0, 2.0}) {
    const ConvLayer stem8 = ConvLayer::kaiming(3, 8, 3, rng);
    const Tensor img8 = constant(rng, {3, 4, 4});
    auto sca = std::make_shared<ScaHead>(8, rng);
    report.grl.push_back(grl_case("sca_head", lambda, stem8, img8, [&](const Tensor& x, std::optional<double> l) {
      return sca_loss_stage(sca->forward(x, l), DomainLabel::target());
    }));
    const ConvLayer stem16 = ConvLayer::kaiming(3, 16, 3, rng);
    const Tensor img16 = constant(rng, {3, 2, 2});
    std::shared_ptr<RdcHead> rdc;
    do {
      rdc = std::make_shared<RdcHead>(16, rng);
    } while (rdc_degenerate(*rdc, stem16.forward(img16)));
    report.grl.push_back(grl_case("rdc_head", lambda, stem16, img16, [&](const Tensor& x, std::optional<double> l) {
      return rdc_loss(rdc->forward(x, l), DomainLabel::source());
    }));
  }
  for (const auto& g : report.grl) report.passed = report.passed && g.passed;
  return report;
}

}  // namespace cwda
