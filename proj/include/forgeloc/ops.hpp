#pragma once

#include <cstdint>
#include <vector>

#include "forgeloc/tensor.hpp"

// Differentiable tensor operations. Every op records a backward closure when
// grad mode is on and an input requires grad. Broadcasting is limited to
// leading dimensions: in binary ops one operand's shape must equal the
// other's or be a suffix of it.

namespace forgeloc {

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& x, T s);
/// s - x
template <class T> Tensor<T> rsub_scalar(const Tensor<T>& x, T s);

template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> log(const Tensor<T>& x);
template <class T> Tensor<T> exp(const Tensor<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <class T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
/// x^e for x > 0 (or integral e).
template <class T> Tensor<T> pow_scalar(const Tensor<T>& x, T e);

/// Full reductions to a 0-d tensor.
template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
template <class T> Tensor<T> sum_axis(const Tensor<T>& x, int64_t axis, bool keepdim = false);

/// One dimension may be -1 and is inferred.
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& perm);
template <class T> Tensor<T> transpose(const Tensor<T>& x, int64_t a, int64_t b);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int64_t axis);

/// [*, M, K] x [*, K, N] -> [*, M, N]; batch dims broadcast numpy-style.
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x: [..., in], weight: [out, in], bias: [out] or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// x: [B, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout] or undefined.
/// Output size (H + 2 * padding - kh) / stride + 1 with floor division.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, int64_t padding);
template <class T> Tensor<T> max_pool2d(const Tensor<T>& x, int64_t kernel, int64_t stride);

/// Nearest-neighbour resize of the two trailing dims of a [B, C, H, W] tensor.
template <class T> Tensor<T> nearest_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w);
template <class T> Tensor<T> nearest_upsample(const Tensor<T>& x, int64_t factor);

/// Max-subtracted softmax along one axis.
template <class T> Tensor<T> softmax(const Tensor<T>& x, int64_t axis);

/// Normalizes over the last dim; gamma and beta have that dim's size.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
/// x: [B, C, H, W]; statistics over each group of C / groups channels.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int64_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));
/// Per-channel batch statistics in training (running buffers updated in
/// place), running statistics otherwise.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

/// Counter-based dropout mask key: the mask depends only on these values
/// and the element index, never on evaluation order.
struct DropoutKey {
  uint64_t seed = 0;
  uint64_t op_id = 0;
  uint64_t step = 0;
};

template <class T> Tensor<T> dropout(const Tensor<T>& x, T p, bool training, DropoutKey key);

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <class T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <class T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <class T> Tensor<T> operator-(T s, const Tensor<T>& a) { return rsub_scalar(a, s); }

}  // namespace forgeloc
