#pragma once

#include <cmath>

#include "fb/tensor.hpp"

namespace fb {

// Plain (graph-free) kernels for inference paths. The autodiff ops call the
// same routines where exact agreement between the two paths matters.

// y[0..n) = softmax(x / tau); max-subtracted, sum accumulated in double.
void softmax_row(const float *x, float *y, int n, float inv_tau);

// Row-wise log softmax denominator: log(sum exp(x - max)) + max, in double.
double log_sum_exp_row(const float *x, int n);

// out(m,n) += a(m,k) * b(k,n); ikj order, same accumulation as the graph op.
void matmul_acc(const float *a, const float *b, float *out, int m, int k, int n);

// out(m,n) = a(m,k) * b(n,k)^T.
void matmul_nt(const float *a, const float *b, float *out, int m, int k, int n);

// x (H,W,Cin) -> out (Ho,Wo,Cout); w (kh,kw,Cin,Cout); same loop structure as
// the graph conv2d.
void conv2d_fwd(const Tensor &x, const Tensor &w, const Tensor &bias, int stride, int pad,
                Tensor &out);

// In-place row layer norm with per-row double statistics.
void layer_norm_row(float *x, const float *gamma, const float *beta, int n, float eps = 1e-5f);

inline float sigmoid1(float v) { return 1.0f / (1.0f + std::exp(-v)); }
inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace fb
