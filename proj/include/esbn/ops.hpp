#pragma once

// Differentiable operations over esbn::Tensor.
//
// Binary elementwise ops broadcast with NumPy rules. Axis arguments are
// zero-based. Every op validates shapes and throws TensorError on mismatch or
// on a non-finite result.

#include <cstddef>
#include <span>
#include <vector>

#include "esbn/tensor.hpp"

namespace esbn {

// Elementwise arithmetic (broadcasting).
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }

/// a * factor + offset with constant (non-trainable) coefficients.
template <typename S> Tensor<S> affine(const Tensor<S>& a, S factor, S offset);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S factor) { return affine(a, factor, S(0)); }
template <typename S> Tensor<S> add_scalar(const Tensor<S>& a, S offset) { return affine(a, S(1), offset); }

// Unary nonlinearities.
template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> tanh(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> softplus(const Tensor<S>& x);
template <typename S> Tensor<S> exp(const Tensor<S>& x);
template <typename S> Tensor<S> log(const Tensor<S>& x);
template <typename S> Tensor<S> sqrt(const Tensor<S>& x);
template <typename S> Tensor<S> square(const Tensor<S>& x);

// Linear algebra.
/// [m,k] x [k,n] -> [m,n]
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// Batched: [g,m,k] x [g,k,n] -> [g,m,n]; with transpose_b, b is [g,n,k].
template <typename S> Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false);
/// x[..., in] W^T + bias with W [out,in], bias [out] (bias may be undefined).
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

// Reductions.
template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
template <typename S> Tensor<S> sum(const Tensor<S>& x, std::size_t axis, bool keepdim = false);
template <typename S> Tensor<S> mean(const Tensor<S>& x, std::size_t axis, bool keepdim = false);

// Shape manipulation.
template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& x, const std::vector<std::size_t>& axes);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis);
template <typename S> Tensor<S> stack(const std::vector<Tensor<S>>& parts, std::size_t axis);
template <typename S> Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename S>
Tensor<S> index_select(const Tensor<S>& x, std::size_t axis, std::span<const std::size_t> indices);
/// out[i] = x[(i - shift) mod n] along axis.
template <typename S> Tensor<S> roll(const Tensor<S>& x, long shift, std::size_t axis);

// Normalization and probability.
template <typename S> Tensor<S> softmax(const Tensor<S>& x);
template <typename S> Tensor<S> log_softmax(const Tensor<S>& x);
/// Normalizes the last axis to zero mean / unit population variance, then gamma*x+beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5));

// Convolution: x [N,C,H,W], weight [O,C,K,K], bias [O] -> [N,O,H',W'].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, std::size_t stride = 2,
                 std::size_t pad = 1);

// Losses, averaged over the batch.
/// logits [N] or [N,1], targets in {0,1}.
template <typename S> Tensor<S> bce_with_logits(const Tensor<S>& logits, std::span<const int> targets);
/// logits [N,C], integer class targets.
template <typename S> Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets);

/// Sinusoidal position table [length, width]; constant.
template <typename S> Tensor<S> positional_encoding(std::size_t length, std::size_t width);

}  // namespace esbn
