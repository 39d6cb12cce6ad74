#pragma once

#include "vafuse/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace vafuse {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x) { return scale(x, -1.0); }

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// x[N,in] * w[out,in]^T + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax_lastdim(const Tensor& x);

/// Normalizes each row over the last axis, then applies gamma/beta when defined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
  BatchNormState() = default;
  BatchNormState(std::size_t features, double momentum, double eps = 1e-5)
      : running_mean(features, 0.0), running_var(features, 1.0), momentum(momentum), eps(eps) {}

  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization of x[N,F] over the N axis. Train mode normalizes with
/// the batch moments and updates `state`; eval mode uses the running moments.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                     Mode mode);

/// Inverted dropout. Eval mode returns `x` itself.
Tensor dropout(const Tensor& x, double p, Mode mode, std::uint64_t seed);

Tensor concat_lastdim(std::span<const Tensor> parts);
/// Concatenation along axis 0.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t length);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t length);
/// Gathers entries of axis 0; indices may repeat.
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Causal dilated convolution: x[C_in,T], w[C_out,C_in,K] -> [C_out,T].
/// Tap k reads x at t - (K-1-k)*dilation, zero before the sequence start.
Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t dilation);

/// Square-kernel convolution: x[N,C_in,H,W], w[C_out,C_in,K,K] -> [N,C_out,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);

/// Pointwise channel mixing: x[C_in,H,W] or x[N,C_in,H,W], w[C_out,C_in].
Tensor conv2d_1x1(const Tensor& x, const Tensor& w);

/// Spatial mean: [C,H,W] -> [C], [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

}  // namespace vafuse
