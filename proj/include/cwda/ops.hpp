#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "cwda/tensor.hpp"

namespace cwda {

enum class PointwiseKind { Add, Sub, Mul, Scale, Relu, Sigmoid, Log, Exp, Square };

std::string_view to_string(PointwiseKind kind);
bool is_binary(PointwiseKind kind);

/// Element-wise dispatch. Binary kinds take `b` (same shape as `a`, or a
/// single-element tensor on either side); Scale uses `constant`.
Tensor pointwise(PointwiseKind kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt,
                 double constant = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_constant(const Tensor& a, double constant);
/// constant - a
Tensor rsub(double constant, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// Clamps into [lo, hi]; gradient passes only where the input was inside.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// Contiguous flat range [offset, offset + count) as a 1-D tensor.
Tensor slice(const Tensor& a, std::size_t offset, std::size_t count);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Zero-padded stride-1 cross-correlation. input (Cin, H, W), kernel
/// (Cout, Cin, k, k) with k odd, optional bias (Cout). Padding is k / 2, so the
/// spatial shape is preserved.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias = std::nullopt);

/// 2x2 max pooling with stride 2; ties resolve to the first element in
/// row-major order within the window.
Tensor max_pool2(const Tensor& input);

/// (C, H, W) -> (C, 1) per-channel spatial mean.
Tensor global_avg_pool(const Tensor& input);

enum class NormMode { Train, Eval };

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;
  double eps = 1e-5;

  static RunningStats identity(std::size_t channels);
};

/// Per-channel normalization over spatial positions of a single sample.
/// Train mode uses the sample statistics and updates `stats` (unbiased
/// variance, momentum 0.1); Eval mode normalizes with `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, NormMode mode,
                  RunningStats& stats);

/// Gradient reversal: identity forward, backward multiplies by -lambda.
Tensor grl(const Tensor& input, double lambda);

/// Numerically stable log-softmax over all elements.
Tensor log_softmax(const Tensor& logits);

/// Smooth L1 with transition point 1, summed over elements. `target` is a
/// constant.
Tensor smooth_l1(const Tensor& prediction, const Tensor& target);

}  // namespace cwda
