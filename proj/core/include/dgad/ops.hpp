#pragma once

#include "dgad/tensor.hpp"

namespace dgad {

// ---------------------------------------------------------------------------
// Low-level kernels. All reductions run in a fixed per-output-element order,
// so results are bit-deterministic at any thread count.
// ---------------------------------------------------------------------------
namespace kernels {

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

// x: [C,H,W] -> col: [C*kh*kw, Ho*Wo]
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, T* col);

// col: [C*kh*kw, Ho*Wo] scatter-added back into x: [C,H,W]
template <typename T>
void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad, T* x);

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Forward ops. Pure functions over immutable inputs; shape/finiteness
// violations throw std::invalid_argument.
// ---------------------------------------------------------------------------

/// Row-wise softmax over the last dimension, computed with max-subtraction.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x);

/// softmax(Q K^T / sqrt(C)) V for Q:[B,N,C], K:[B,M,C], V:[B,M,C].
template <typename T>
TensorT<T> scaled_dot_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v);

/// 2-d convolution, x:[B,Cin,H,W], kernel:[Cout,Cin,kh,kw], bias:[Cout].
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int padding, int stride = 1);

/// Affine map over the last dimension, x:[...,Din], w:[Din,Dout], b:[Dout].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

enum class Activation { Relu, Sigmoid };

template <typename T>
TensorT<T> activation(const TensorT<T>& x, Activation kind);

/// Catmull-Rom bicubic resize (a = -0.5), edge-clamped, separable.
/// Handles both directions; bicubic_downsample enforces the shrink contract.
template <typename T>
TensorT<T> bicubic_resize(const TensorT<T>& x, int out_h, int out_w);

/// x:[B,C,H,W] -> [B,C,h,w] with h <= H, w <= W.
template <typename T>
TensorT<T> bicubic_downsample(const TensorT<T>& x, int out_h, int out_w);

/// Elementwise min(max(x, lo), hi).
template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi);

}  // namespace dgad
