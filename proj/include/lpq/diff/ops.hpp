#pragma once

#include <cstdint>
#include <vector>

#include "lpq/diff/tape.hpp"

// Differentiable operations on tape variables. Layout conventions:
//  - feature maps are channel-first [C, T, H, W]; reshaping to [C, T*H*W]
//    gives the per-position matrix view used by pointwise projections;
//  - "rows" ops act along the last axis of a rank-2 tensor.
namespace lpq::diff {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);

template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
// |x|; derivative at 0 is 0.
template <typename T> Var<T> abs(Var<T> a);
// min(max(x, lo), hi); derivative 1 strictly inside, 0 on or outside the bounds.
template <typename T> Var<T> clamp(Var<T> a, T lo, T hi);
// Same forward as clamp(x, -bound, bound) with derivative 1 for |x| <= bound.
template <typename T> Var<T> hardtanh(Var<T> a, T bound);

// Straight-through sign: forward sign(x) with sign(0) = +1, backward passes
// the upstream gradient where |x| <= bound and zeroes it elsewhere.
template <typename T> Var<T> ste_sign(Var<T> a, T bound);

// Per-element binary entropy -(p ln p + (1-p) ln(1-p)) with p clamped to
// [eps, 1-eps]; derivative is zero where the clamp is active.
template <typename T> Var<T> binary_entropy(Var<T> p, T eps);
// Per-element Bernoulli KL(p || q), both sides clamped to [eps, 1-eps].
template <typename T> Var<T> bernoulli_kl(Var<T> p, Var<T> q, T eps);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

template <typename T> Var<T> reshape(Var<T> a, Shape dims);
template <typename T> Var<T> detach(Var<T> a);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
template <typename T> Var<T> layer_norm_rows(Var<T> x, T eps);
// x [C, ...] + bias [C], broadcast over trailing extents.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
// v [n] -> [n, cols], each row constant.
template <typename T> Var<T> expand_cols(Var<T> v, std::int64_t cols);

template <typename T> Var<T> slice_cols(Var<T> x, std::int64_t begin, std::int64_t end);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> x, std::int64_t begin, std::int64_t end);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> log_softmax_rows(Var<T> x);
// Row i may only attend to columns j <= i (square input).
template <typename T> Var<T> causal_softmax_rows(Var<T> x);
// Mean negative log-likelihood of targets under row-wise softmax of logits.
// Rows whose target is negative are ignored.
template <typename T> Var<T> cross_entropy_rows(Var<T> logits, const std::vector<int>& targets);

// table [V, D] gathered at ids -> [n, D].
template <typename T> Var<T> embedding(Var<T> table, const std::vector<int>& ids);

// 3x3x3 cross-correlation, zero padding 1, x [Cin,T,H,W], w [Cout,Cin,3,3,3].
template <typename T> Var<T> conv3d(Var<T> x, Var<T> w, int stride_t, int stride_s);
template <typename T> Var<T> avg_pool3d(Var<T> x, int ft, int fh, int fw);
template <typename T> Var<T> upsample_nearest3d(Var<T> x, int ft, int fh, int fw);

// Valid 2D correlation of each plane of x [N, H, W] with a fixed k x k kernel.
template <typename T> Var<T> filter2d_valid(Var<T> x, const BasicTensor<T>& kernel);

// Operator sugar.
template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator*(Var<T> a, T s) { return scale(a, s); }
template <typename T> Var<T> operator*(T s, Var<T> a) { return scale(a, s); }
template <typename T> Var<T> operator-(Var<T> a) { return scale(a, T(-1)); }

}  // namespace lpq::diff
