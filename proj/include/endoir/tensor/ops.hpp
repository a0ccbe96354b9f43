#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir {

// Elementwise, numpy-style broadcasting over trailing-aligned dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// GeLU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);

Tensor sqrt(const Tensor& x);
Tensor log1p(const Tensor& x);

// Reductions to a [1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Shape manipulation. All of these copy.
Tensor reshape(const Tensor& x, Shape shape);
Tensor narrow(const Tensor& x, int dim, std::int64_t start, std::int64_t length);
std::vector<Tensor> chunk(const Tensor& x, int parts, int dim);
Tensor concat(std::span<const Tensor> xs, int dim);
Tensor concat(std::initializer_list<Tensor> xs, int dim);

using IndexList = std::vector<std::int64_t>;

// Indices must be unique and in range.
Tensor index_select(const Tensor& x, int dim, const IndexList& idx);
// Copy of base with slices idx[j] along dim replaced by payload slice j.
Tensor index_scatter(const Tensor& base, const Tensor& payload, int dim, const IndexList& idx);
Tensor gather_channels(const Tensor& x, const IndexList& idx);
Tensor scatter_channels(const Tensor& payload, const IndexList& idx, const Tensor& base);

// [M,K]x[K,N] or batched [B,M,K]x[B,K,N]; trans flags describe storage.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x[N,in] * w[out,in]^T + b[out]; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation. input [N,C,H,W], kernel [O,C,kh,kw], bias [O] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding);
// Per-channel filters: kernel [C,1,kh,kw], bias [C] or undefined; stride 1.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding);

// Normalizes over the contiguous dims listed (biased variance). gain and
// shift hold one value per normalized element.
Tensor layer_norm(const Tensor& input, std::span<const int> dims, const Tensor& gain, const Tensor& shift,
                  double eps);
Tensor layer_norm(const Tensor& input, std::initializer_list<int> dims, const Tensor& gain,
                  const Tensor& shift, double eps);

Tensor softmax(const Tensor& input, int dim);

// [N,C,H,W] -> [N,C,1,1]
Tensor adaptive_avg_pool(const Tensor& input);
// Half-pixel-centre bilinear resize of the trailing two dims of [N,C,H,W].
Tensor resize_bilinear(const Tensor& input, double scale);
// Mean over non-overlapping factor x factor blocks.
Tensor area_downsample(const Tensor& input, int factor);

struct ComplexPair {
  Tensor real;
  Tensor imag;
};

// Unnormalized forward 2-D DFT over the trailing two dims (powers of two).
ComplexPair fft2(const Tensor& input);
ComplexPair fft2(const ComplexPair& input);
// Inverse with 1/(H*W) normalization, so ifft2(fft2(x)) == x.
ComplexPair ifft2(const ComplexPair& input);

// k largest entries; ties go to the lower index; result sorted ascending.
IndexList topk_indices(std::span<const double> values, std::int64_t k);
IndexList topk_indices(const Tensor& values, std::int64_t k);

// Not differentiable.
Tensor clamp(const Tensor& x, double lo, double hi);
bool all_finite(const Tensor& x);

}  // namespace endoir
