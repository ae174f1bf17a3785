#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "dgad/graph.hpp"

namespace dgad {

template <typename T>
struct ConvLayer {
    TensorT<T> w;  // [Cout,Cin,k,k]
    TensorT<T> b;  // [Cout]
};

/// Conv1x1 followed by L shape-preserving Conv3x3 layers.
template <typename T>
struct ProjStack {
    ConvLayer<T> conv1x1;
    std::vector<ConvLayer<T>> conv3x3;
};

/// Gated dense cross-attention parameters: q/k/v projection stacks, the
/// position-wise gate MLP, and the clamp interval for the complement gate.
template <typename T>
struct DenseAttnParams {
    ProjStack<T> q, k, v;
    TensorT<T> fc1_w, fc1_b;  // [C, hidden]
    TensorT<T> fc2_w, fc2_b;  // [hidden, 1]
    double clamp_lo = 0.5;
    double clamp_hi = 0.8;

    /// Shape-preservation and clamp-interval checks; throws on violation.
    void validate() const;
};

template <typename T>
struct GateMaps {
    TensorT<T> alpha;  // [B,1,H,W], strictly in (0,1)
    TensorT<T> beta;   // [B,1,H,W], in [clamp_lo, clamp_hi]
};

/// Test-build overrides: pin alpha to a constant and/or bypass the beta
/// clamp. The production forward never constructs one of these.
struct DenseAttnHooks {
    std::optional<double> alpha_const;
    bool disable_clamp = false;
};

template <typename T>
struct ProjStackRefs {
    typename Graph<T>::Ref c1_w, c1_b;
    std::vector<std::pair<typename Graph<T>::Ref, typename Graph<T>::Ref>> c3;
};

template <typename T>
struct DenseAttnRefs {
    ProjStackRefs<T> q, k, v;
    typename Graph<T>::Ref fc1_w, fc1_b, fc2_w, fc2_b;
    double clamp_lo = 0.5;
    double clamp_hi = 0.8;
};

template <typename T>
typename Graph<T>::Ref project_g(Graph<T>& g, typename Graph<T>::Ref f, const ProjStackRefs<T>& stack);

/// alpha = sigmoid(fc2(relu(fc1(q)))) per position; beta = clamp(1-alpha).
template <typename T>
std::pair<typename Graph<T>::Ref, typename Graph<T>::Ref> gate_g(Graph<T>& g,
                                                                 typename Graph<T>::Ref q_proj,
                                                                 const DenseAttnRefs<T>& p,
                                                                 const DenseAttnHooks* hooks = nullptr);

/// softmax(Q K^T / sqrt(C)) V (.) alpha + Q (.) beta over projected features.
template <typename T>
typename Graph<T>::Ref dense_attention_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                         typename Graph<T>::Ref f_r, const DenseAttnRefs<T>& p,
                                         const DenseAttnHooks* hooks = nullptr);

/// Ungated variant used by the standard-cross-attention ablation arm:
/// plain scaled-dot attention over the projected features.
template <typename T>
typename Graph<T>::Ref dense_attention_ungated_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                                 typename Graph<T>::Ref f_r, const DenseAttnRefs<T>& p);

// pure forms
template <typename T>
TensorT<T> project(const TensorT<T>& f, const ProjStack<T>& stack);

template <typename T>
GateMaps<T> gate(const TensorT<T>& q_proj, const DenseAttnParams<T>& p);

/// Elementwise clamp of a mask-like tensor to [lo, hi].
template <typename T>
TensorT<T> mask_process(const TensorT<T>& m, double lo, double hi);

template <typename T>
TensorT<T> dense_attention(const TensorT<T>& f_b, const TensorT<T>& f_r, const DenseAttnParams<T>& p,
                           const DenseAttnHooks* hooks = nullptr);

}  // namespace dgad
