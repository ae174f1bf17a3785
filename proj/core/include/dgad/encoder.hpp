#pragma once

#include <array>
#include <vector>

#include "dgad/graph.hpp"
#include "dgad/ops.hpp"

namespace dgad {

/// Per-object token embeddings conditioning every backbone block.
template <typename T>
struct SemanticTokens {
    TensorT<T> tokens;  // [B, n_tok, d_sem]
};

/// Projection matrices of one standard cross-attention block.
template <typename T>
struct CrossAttnParams {
    TensorT<T> w_q;    // [C, D]
    TensorT<T> w_k;    // [d_sem, D]
    TensorT<T> w_v;    // [d_sem, D]
    TensorT<T> w_out;  // [D, C]
};

/// Trainable stand-in for a pretrained image encoder: three stride-2 conv
/// blocks, then attention pooling into learned query slots.
template <typename T>
struct SemanticEncoderParams {
    std::array<TensorT<T>, 3> conv_w;
    std::array<TensorT<T>, 3> conv_b;
    TensorT<T> key_w, key_b;  // [c3, d_sem]
    TensorT<T> val_w, val_b;
    TensorT<T> queries;       // [n_tok, d_sem]
};

/// Channel concat [M | f_bg | f_tgt_t]; values pass through untouched.
template <typename T>
TensorT<T> assemble_input(const TensorT<T>& m_lat, const TensorT<T>& f_bg, const TensorT<T>& f_tgt_t);

/// mapping[i] = i mod cin, identity on the first cin entries.
std::vector<int> cycling_mapping(int cin, int cin_new);

/// Replicates input-layer weights over new input channels:
/// kernel_new[:, i, :, :] = kernel_orig[:, mapping[i], :, :].
template <typename T>
TensorT<T> expand_input_layer(const TensorT<T>& kernel, const TensorT<T>& bias, int cin_new,
                              const std::vector<int>& mapping);

// graph-side parameter handles
template <typename T>
struct CrossAttnRefs {
    typename Graph<T>::Ref w_q, w_k, w_v, w_out;
};

template <typename T>
struct SemanticEncoderRefs {
    std::array<typename Graph<T>::Ref, 3> conv_w, conv_b;
    typename Graph<T>::Ref key_w, key_b, val_w, val_b, queries;
};

/// f_b:[B,C,h,w] attends over tokens:[B,N,d_sem]; output is f_b plus the
/// W_out-projected attention result (residual form).
template <typename T>
typename Graph<T>::Ref semantic_cross_attention_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                                  typename Graph<T>::Ref tokens,
                                                  const CrossAttnRefs<T>& p);

template <typename T>
typename Graph<T>::Ref semantic_encode_g(Graph<T>& g, typename Graph<T>::Ref i_obj,
                                         const SemanticEncoderRefs<T>& p);

// pure forms
template <typename T>
TensorT<T> semantic_cross_attention(const TensorT<T>& f_b, const SemanticTokens<T>& tokens,
                                    const CrossAttnParams<T>& p);

template <typename T>
SemanticTokens<T> semantic_encode(const TensorT<T>& i_obj, const SemanticEncoderParams<T>& p);

/// Per-position attention mass (max over tokens of the softmax weights),
/// min-max normalized per image; a constant map normalizes to all-ones.
template <typename T>
TensorT<T> attention_map(const TensorT<T>& f_b, const SemanticTokens<T>& tokens,
                         const CrossAttnParams<T>& p);

}  // namespace dgad
