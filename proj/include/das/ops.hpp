#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "das/tensor.hpp"

namespace das {

enum class UnaryKind { neg, exp, log, tanh, sigmoid, softplus, gelu, silu, square, sqrt };
enum class BinaryKind { add, sub, mul, div };

/// Numpy-style trailing-dimension broadcast of two shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryKind kind, const Tensor& a);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::div, a, b); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor neg(const Tensor& a) { return elementwise(UnaryKind::neg, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryKind::exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryKind::log, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(UnaryKind::tanh, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryKind::sigmoid, a); }
inline Tensor softplus(const Tensor& a) { return elementwise(UnaryKind::softplus, a); }
/// tanh approximation.
inline Tensor gelu(const Tensor& a) { return elementwise(UnaryKind::gelu, a); }
inline Tensor silu(const Tensor& a) { return elementwise(UnaryKind::silu, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryKind::square, a); }
inline Tensor sqrt(const Tensor& a) { return elementwise(UnaryKind::sqrt, a); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
/// Contiguous slice [start, start + length) along one axis.
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// Gathers entries along `axis` at the listed positions; backward scatters.
Tensor take(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// x is C x H x W or B x C x H x W; weight is Cout x (C/groups) x kh x kw.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding, std::size_t groups);

constexpr double kLayerNormEps = 1e-6;
constexpr double kBatchNormEps = 1e-5;

/// Normalizes along one axis; gamma/beta (optional) have the axis extent.
Tensor layernorm(const Tensor& x, std::size_t axis, const Tensor& gamma = {}, const Tensor& beta = {},
                 double eps = kLayerNormEps);

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
};

/// Channels on the last axis; statistics over every other axis.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchStats* stats,
                       double eps = kBatchNormEps);
Tensor batchnorm_infer(const Tensor& x, std::span<const double> running_mean,
                       std::span<const double> running_var, const Tensor& gamma, const Tensor& beta,
                       double eps = kBatchNormEps);

/// Mean over spatial axes of a channels-last map: H x W x C -> C,
/// B x H x W x C -> B x C.
Tensor global_avg_pool(const Tensor& x);

/// Mean label-smoothed cross-entropy of logits [B, K].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double smoothing = 0.0);

}  // namespace das
