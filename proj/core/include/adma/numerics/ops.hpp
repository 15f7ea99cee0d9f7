#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adma/numerics/tensor.hpp"

namespace adma::numerics {

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// c[i,j] = sum_k a[i,k] b[k,j] for rank-2 operands.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x w + b with b [p] added to every row; one graph node.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---------------------------------------------------------------------------
// Elementwise
//
// Broadcasting ruleset: shapes are right-aligned; each aligned pair of sizes
// must be equal or one of them must be 1. Missing leading dimensions count
// as 1. Nothing else broadcasts.
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { relu, gelu, exp, log, tanh, silu, sigmoid, log_sigmoid, abs, square };

/// sqrt(2/pi) for the tanh form of GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3))).
inline constexpr double kGeluTanhScale = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
/// Unary ops. log of any x <= 0 throws DomainError instead of producing NaN/-Inf.
Tensor elementwise(UnaryOp op, const Tensor& a);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor relu(const Tensor& a) { return elementwise(UnaryOp::relu, a); }
inline Tensor gelu(const Tensor& a) { return elementwise(UnaryOp::gelu, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryOp::exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryOp::log, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(UnaryOp::tanh, a); }
inline Tensor silu(const Tensor& a) { return elementwise(UnaryOp::silu, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryOp::sigmoid, a); }
inline Tensor log_sigmoid(const Tensor& a) { return elementwise(UnaryOp::log_sigmoid, a); }
inline Tensor abs(const Tensor& a) { return elementwise(UnaryOp::abs, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryOp::square, a); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Sum of equally shaped tensors, accumulated left to right.
Tensor add_n(const std::vector<Tensor>& terms);

// ---------------------------------------------------------------------------
// Reductions and normalisation
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [R x C] -> [R], summing each row.
Tensor sum_rows(const Tensor& a);

/// Numerically stable log-softmax along `axis` (max subtraction).
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);

/// Per-row standardisation without affine parameters; biased variance.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-6);

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// out[i, :] = table[ids[i], :]. Gradients scatter-add back into the table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

// ---------------------------------------------------------------------------
// Sequence ops. Sequences are [time x channels]; a packed batch is a row-wise
// concatenation of utterances described by `segments` (row counts).
// ---------------------------------------------------------------------------

/// Sliding windows: out[n, j*C + c] = x[n*stride + j - pad_left, c], zero outside [0, N).
/// Output length floor((N + pad_left + pad_right - kernel) / stride) + 1.
Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad_left,
                   std::size_t pad_right);

/// 1-D convolution, x [N x Cin], weight [(kernel*Cin) x Cout], optional bias [Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel, std::size_t stride,
              std::size_t pad_left, std::size_t pad_right);

/// Depthwise "same" convolution per segment: weight [kernel x C], kernel odd.
/// Windows never cross segment boundaries.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, std::span<const std::size_t> segments);

/// cos(a[n], b[n]) = a.b / (max(|a|, eps) * max(|b|, eps)) per row -> [R].
/// eps = 0 disables the guard; a zero-norm row then throws DomainError.
Tensor row_cosine(const Tensor& a, const Tensor& b, double eps = 1e-8);

/// Softmax rows recorded by multihead_attention when a probe is passed.
struct AttentionProbe {
  /// One n x n row-major matrix per (segment, head), segment-major.
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> sizes;
};

/// Bidirectional multi-head self-attention inside each segment.
/// qkv [R x 3D] holds Q | K | V column blocks; returns [R x D].
Tensor multihead_attention(const Tensor& qkv, std::span<const std::size_t> segments, std::size_t heads,
                           AttentionProbe* probe = nullptr);

/// [sin(scale*t*w_0..w_{h-1}), cos(...)] with w_i = max_period^(-i/h), h = dim/2.
/// t is [B] or [B x 1]; result [B x dim]. Differentiable in t.
Tensor sinusoidal_features(const Tensor& t, std::size_t dim, double scale, double max_period = 10000.0);

}  // namespace adma::numerics
