#include "cwda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwda/errors.hpp"
#include "gemm.hpp"

namespace cwda {

using detail::Node;

std::string_view to_string(PointwiseKind kind) {
  switch (kind) {
    case PointwiseKind::Add: return "add";
    case PointwiseKind::Sub: return "sub";
    case PointwiseKind::Mul: return "mul";
    case PointwiseKind::Scale: return "scale";
    case PointwiseKind::Relu: return "relu";
    case PointwiseKind::Sigmoid: return "sigmoid";
    case PointwiseKind::Log: return "log";
    case PointwiseKind::Exp: return "exp";
    case PointwiseKind::Square: return "square";
  }
  return "unknown";
}

bool is_binary(PointwiseKind kind) {
  return kind == PointwiseKind::Add || kind == PointwiseKind::Sub || kind == PointwiseKind::Mul;
}

Tensor pointwise(PointwiseKind kind, const Tensor& a, const std::optional<Tensor>& b, double constant) {
  if (is_binary(kind) && !b) {
    throw ContractError(std::string(to_string(kind)) + " needs a second operand");
  }
  switch (kind) {
    case PointwiseKind::Add: return add(a, *b);
    case PointwiseKind::Sub: return sub(a, *b);
    case PointwiseKind::Mul: return mul(a, *b);
    case PointwiseKind::Scale: return scale(a, constant);
    case PointwiseKind::Relu: return relu(a);
    case PointwiseKind::Sigmoid: return sigmoid(a);
    case PointwiseKind::Log: return log(a);
    case PointwiseKind::Exp: return exp(a);
    case PointwiseKind::Square: return square(a);
  }
  throw ContractError("unknown pointwise kind");
}

namespace {

// Binary element-wise op with scalar broadcasting on either side. `da`/`db`
// return the local partial derivatives at (x, y).
template <typename F, typename Da, typename Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, Da da, Db db) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Shape out_shape = (same || b_scalar) ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t as = (a.numel() == n) ? 1 : 0;
  const std::size_t bs = (b.numel() == n) ? 1 : 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i * as], bd[i * bs]);
  return Tensor::make_result(out_shape, std::move(out), name, {a, b}, [as, bs, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.grad.size();
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i * as] += self.grad[i] * da(pa.data[i * as], pb.data[i * bs]);
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i * bs] += self.grad[i] * db(pa.data[i * as], pb.data[i * bs]);
    }
  });
}

// Unary element-wise op; `df(x, y)` is the derivative given input x and
// output y.
template <typename F, typename Df>
Tensor unary(const char* name, const Tensor& a, F f, Df df) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  return Tensor::make_result(a.shape(), std::move(out), name, {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_constant(const Tensor& a, double constant) {
  return unary(
      "add_constant", a, [constant](double x) { return x + constant; }, [](double, double) { return 1.0; });
}

Tensor rsub(double constant, const Tensor& a) {
  return unary(
      "rsub", a, [constant](double x) { return constant - x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({1}, {s}, "sum", {a}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    const double up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> values(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(values), "reshape", {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

Tensor slice(const Tensor& a, std::size_t offset, std::size_t count) {
  if (count == 0 || offset + count > a.numel()) {
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                         ") out of range for " + shape_str(a.shape()));
  }
  auto d = a.data();
  std::vector<double> values(d.begin() + static_cast<std::ptrdiff_t>(offset),
                             d.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return Tensor::make_result({count}, std::move(values), "slice", {a}, [offset](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) detail::gemm_nt(m, k, n, self.grad.data(), pb.data.data(), pa.grad_buffer().data());
    if (pb.requires_grad) detail::gemm_tn(k, n, m, pa.data.data(), self.grad.data(), pb.grad_buffer().data());
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto d = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), "transpose", {a}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, pad;
  std::size_t hw() const { return h * w; }
  std::size_t patch() const { return cin * k * k; }
};

constexpr std::size_t kRowLayoutBelow = 256;

std::vector<double> transposed(const std::vector<double>& m, std::size_t r, std::size_t c) {
  std::vector<double> t(m.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = m[i * c + j];
  return t;
}

// Unfolds a (cin, h, w) image into a (cin*k*k, h*w) matrix of zero-padded
// patches.
void im2col(const ConvGeometry& g, const double* in, double* cols) {
  const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = in + c * g.hw();
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        double* dst = cols + row * g.hw();
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + dy;
          double* out = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = x + dx;
            out[x] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* in) {
  const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = in + c * g.hw();
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        const double* src = cols + row * g.hw();
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          double* dst = plane + sy * w;
          const double* s = src + y * w;
          for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = x + dx;
            if (sx >= 0 && sx < w) dst[sx] += s[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias) {
  if (input.rank() != 3) throw DimensionError("conv2d input must be (C, H, W), got " + shape_str(input.shape()));
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d kernel must be (Cout, Cin, k, k), got " + shape_str(kernel.shape()));
  }
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d kernel must be square with odd size, got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
  }
  const ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), k, k / 2};
  if (bias && (bias->numel() != g.cout)) {
    throw DimensionError("conv2d bias " + shape_str(bias->shape()) + " does not match " + std::to_string(g.cout) +
                         " output channels");
  }

  // Small maps put the short spatial axis innermost in every product, so
  // those use the patch-major layout (hw, patch) instead.
  const bool rows = g.hw() < kRowLayoutBelow;
  std::vector<double> cols(g.patch() * g.hw());
  im2col(g, input.data().data(), cols.data());
  if (rows) cols = transposed(cols, g.patch(), g.hw());
  std::vector<double> out(g.cout * g.hw(), 0.0);
  if (rows) {
    std::vector<double> out_t(g.hw() * g.cout, 0.0);
    detail::gemm_nt(g.hw(), g.cout, g.patch(), cols.data(), kernel.data().data(), out_t.data());
    out = transposed(out_t, g.hw(), g.cout);
  } else {
    detail::gemm_nn(g.cout, g.hw(), g.patch(), kernel.data().data(), cols.data(), out.data());
  }
  if (bias) {
    auto bd = bias->data();
    for (std::size_t o = 0; o < g.cout; ++o) {
      for (std::size_t i = 0; i < g.hw(); ++i) out[o * g.hw() + i] += bd[o];
    }
  }

  std::vector<Tensor> parents{input, kernel};
  if (bias) parents.push_back(*bias);
  const bool keep_cols = grad_recording_enabled() && kernel.requires_grad();
  return Tensor::make_result(
      {g.cout, g.h, g.w}, std::move(out), "conv2d", std::move(parents),
      [g, rows, cols = keep_cols ? std::move(cols) : std::vector<double>{}](Node& self) {
        Node& pin = *self.parents[0];
        Node& pk = *self.parents[1];
        const double* up = self.grad.data();
        std::vector<double> up_t;
        if (rows) up_t = transposed(self.grad, g.cout, g.hw());
        if (pk.requires_grad) {
          if (rows) {
            detail::gemm_tn(g.cout, g.patch(), g.hw(), up_t.data(), cols.data(), pk.grad_buffer().data());
          } else {
            detail::gemm_nt(g.cout, g.patch(), g.hw(), up, cols.data(), pk.grad_buffer().data());
          }
        }
        if (pin.requires_grad) {
          std::vector<double> dcols(g.patch() * g.hw(), 0.0);
          if (rows) {
            detail::gemm_nn(g.hw(), g.patch(), g.cout, up_t.data(), pk.data.data(), dcols.data());
            dcols = transposed(dcols, g.hw(), g.patch());
          } else {
            detail::gemm_tn(g.patch(), g.hw(), g.cout, pk.data.data(), up, dcols.data());
          }
          col2im(g, dcols.data(), pin.grad_buffer().data());
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->grad_buffer();
          for (std::size_t o = 0; o < g.cout; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.hw(); ++i) s += up[o * g.hw() + i];
            gb[o] += s;
          }
        }
      });
}

Tensor max_pool2(const Tensor& input) {
  if (input.rank() != 3) throw DimensionError("max_pool2 input must be (C, H, W), got " + shape_str(input.shape()));
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < 2 || w < 2) throw DimensionError("max_pool2 needs H, W >= 2, got " + shape_str(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  auto d = input.data();
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = ch * h * w + (2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ch * h * w + (2 * y + dy) * w + (2 * x + dx);
            if (d[idx] > d[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + y) * ow + x;
        out[o] = d[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor::make_result({c, oh, ow}, std::move(out), "max_pool2", {input},
                             [argmax = std::move(argmax)](Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
                             });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 3) {
    throw DimensionError("global_avg_pool input must be (C, H, W), got " + shape_str(input.shape()));
  }
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  auto d = input.data();
  std::vector<double> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += d[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  return Tensor::make_result({c, 1}, std::move(out), "global_avg_pool", {input}, [c, hw](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double share = self.grad[ch] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += share;
    }
  });
}

RunningStats RunningStats::identity(std::size_t channels) {
  RunningStats s;
  s.mean.assign(channels, 0.0);
  s.var.assign(channels, 1.0);
  return s;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, NormMode mode,
                  RunningStats& stats) {
  if (input.rank() != 3) throw DimensionError("batch_norm input must be (C, H, W), got " + shape_str(input.shape()));
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batch_norm affine parameters must have " + std::to_string(c) + " entries");
  }
  if (stats.mean.size() != c || stats.var.size() != c) {
    throw DimensionError("batch_norm running statistics must have " + std::to_string(c) + " entries");
  }
  if (mode == NormMode::Train && hw < 2) {
    throw DegenerateStatisticsError("batch_norm in train mode needs at least 2 spatial positions, got " +
                                    shape_str(input.shape()));
  }
  auto x = input.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<double> xhat(c * hw), inv_std(c), out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xc = x.data() + ch * hw;
    double mu, var;
    if (mode == NormMode::Train) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += xc[i];
      mu = s / static_cast<double>(hw);
      double v = 0.0;
      for (std::size_t i = 0; i < hw; ++i) v += (xc[i] - mu) * (xc[i] - mu);
      var = v / static_cast<double>(hw);
      const double unbiased = v / static_cast<double>(hw - 1);
      stats.mean[ch] = (1.0 - stats.momentum) * stats.mean[ch] + stats.momentum * mu;
      stats.var[ch] = (1.0 - stats.momentum) * stats.var[ch] + stats.momentum * unbiased;
    } else {
      mu = stats.mean[ch];
      var = stats.var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + stats.eps);
    for (std::size_t i = 0; i < hw; ++i) {
      xhat[ch * hw + i] = (xc[i] - mu) * inv_std[ch];
      out[ch * hw + i] = gm[ch] * xhat[ch * hw + i] + bt[ch];
    }
  }
  return Tensor::make_result(
      input.shape(), std::move(out), "batch_norm", {input, gamma, beta},
      [c, hw, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double n = static_cast<double>(hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* up = self.grad.data() + ch * hw;
          const double* xh = xhat.data() + ch * hw;
          double sum_up = 0.0, sum_up_xh = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_up += up[i];
            sum_up_xh += up[i] * xh[i];
          }
          if (pg.requires_grad) pg.grad_buffer()[ch] += sum_up_xh;
          if (pb.requires_grad) pb.grad_buffer()[ch] += sum_up;
          if (px.requires_grad) {
            auto& gx = px.grad_buffer();
            const double scale = pg.data[ch] * inv_std[ch];
            if (mode == NormMode::Train) {
              for (std::size_t i = 0; i < hw; ++i) {
                gx[ch * hw + i] += scale * (up[i] - sum_up / n - xh[i] * sum_up_xh / n);
              }
            } else {
              for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += scale * up[i];
            }
          }
        }
      });
}

Tensor grl(const Tensor& input, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("grl lambda must be nonnegative, got " + std::to_string(lambda));
  std::vector<double> values(input.data().begin(), input.data().end());
  return Tensor::make_result(input.shape(), std::move(values), "grl", {input}, [lambda](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
  });
}

Tensor log_softmax(const Tensor& logits) {
  auto d = logits.data();
  const double mx = *std::max_element(d.begin(), d.end());
  double s = 0.0;
  for (double v : d) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] - lse;
  return Tensor::make_result(logits.shape(), std::move(out), "log_softmax", {logits}, [](Node& self) {
    double total = 0.0;
    for (double g : self.grad) total += g;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] - std::exp(self.data[i]) * total;
  });
}

Tensor smooth_l1(const Tensor& prediction, const Tensor& target) {
  if (prediction.numel() != target.numel()) {
    throw DimensionError("smooth_l1: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  auto p = prediction.data();
  auto t = target.data();
  double total = 0.0;
  std::vector<double> diff(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    diff[i] = p[i] - t[i];
    const double a = std::abs(diff[i]);
    total += a < 1.0 ? 0.5 * diff[i] * diff[i] : a - 0.5;
  }
  return Tensor::make_result({1}, {total}, "smooth_l1", {prediction}, [diff = std::move(diff)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < diff.size(); ++i) {
      const double d = diff[i];
      g[i] += up * (std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
    }
  });
}

}  // namespace cwda
