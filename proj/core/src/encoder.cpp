#include "dgad/encoder.hpp"

#include <cmath>

namespace dgad {

template <typename T>
TensorT<T> assemble_input(const TensorT<T>& m_lat, const TensorT<T>& f_bg, const TensorT<T>& f_tgt_t) {
    if (m_lat.ndim() != 4 || f_bg.ndim() != 4 || f_tgt_t.ndim() != 4)
        throw std::invalid_argument("assemble_input: expects [B,C,h,w] tensors");
    if (m_lat.dim(1) != 1) throw std::invalid_argument("assemble_input: mask must have 1 channel");
    const int b = m_lat.dim(0), h = m_lat.dim(2), w = m_lat.dim(3);
    auto spatial_ok = [&](const TensorT<T>& t) {
        return t.dim(0) == b && t.dim(2) == h && t.dim(3) == w;
    };
    if (!spatial_ok(f_bg) || !spatial_ok(f_tgt_t) || f_bg.dim(1) != f_tgt_t.dim(1))
        throw std::invalid_argument("assemble_input: spatial mismatch " + shape_str(m_lat.shape) + " " +
                                    shape_str(f_bg.shape) + " " + shape_str(f_tgt_t.shape));
    for (T v : m_lat.data)
        if (v < T(0) || v > T(1)) throw std::invalid_argument("assemble_input: mask outside [0,1]");

    const int c = f_bg.dim(1);
    TensorT<T> out({b, 1 + 2 * c, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        T* dst = out.data.data() + static_cast<std::size_t>(i) * (1 + 2 * c) * hw;
        std::copy_n(m_lat.data.data() + static_cast<std::size_t>(i) * hw, hw, dst);
        std::copy_n(f_bg.data.data() + static_cast<std::size_t>(i) * c * hw, c * hw, dst + hw);
        std::copy_n(f_tgt_t.data.data() + static_cast<std::size_t>(i) * c * hw, c * hw, dst + hw + c * hw);
    }
    return out;
}

std::vector<int> cycling_mapping(int cin, int cin_new) {
    std::vector<int> m(static_cast<std::size_t>(cin_new));
    for (int i = 0; i < cin_new; ++i) m[static_cast<std::size_t>(i)] = i % cin;
    return m;
}

template <typename T>
TensorT<T> expand_input_layer(const TensorT<T>& kernel, const TensorT<T>& bias, int cin_new,
                              const std::vector<int>& mapping) {
    if (kernel.ndim() != 4) throw std::invalid_argument("expand_input_layer: kernel must be [Cout,Cin,k,k]");
    const int cout = kernel.dim(0), cin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (bias.numel() != static_cast<std::size_t>(cout))
        throw std::invalid_argument("expand_input_layer: bias size mismatch");
    if (cin_new < cin) throw std::invalid_argument("expand_input_layer: cin_new must be >= cin");
    if (static_cast<int>(mapping.size()) != cin_new)
        throw std::invalid_argument("expand_input_layer: mapping length must equal cin_new");
    for (int i = 0; i < cin_new; ++i) {
        if (mapping[static_cast<std::size_t>(i)] < 0 || mapping[static_cast<std::size_t>(i)] >= cin)
            throw std::invalid_argument("expand_input_layer: mapping index out of range");
        if (i < cin && mapping[static_cast<std::size_t>(i)] != i)
            throw std::invalid_argument("expand_input_layer: mapping must be identity on original channels");
    }
    TensorT<T> out({cout, cin_new, kh, kw});
    const std::size_t kk = static_cast<std::size_t>(kh) * kw;
    for (int oc = 0; oc < cout; ++oc)
        for (int ic = 0; ic < cin_new; ++ic)
            std::copy_n(kernel.data.data() + (static_cast<std::size_t>(oc) * cin + mapping[static_cast<std::size_t>(ic)]) * kk,
                        kk, out.data.data() + (static_cast<std::size_t>(oc) * cin_new + ic) * kk);
    return out;
}

template <typename T>
typename Graph<T>::Ref semantic_cross_attention_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                                  typename Graph<T>::Ref tokens,
                                                  const CrossAttnRefs<T>& p) {
    const auto& fb = g.value(f_b);
    const int h = fb.dim(2), w = fb.dim(3);
    const int d = g.value(p.w_q).dim(1);

    auto zero_d = g.leaf(TensorT<T>({d}), false);
    auto zero_c = g.leaf(TensorT<T>({g.value(p.w_out).dim(1)}), false);

    auto x = g.bchw_to_bnc(f_b);                 // [B,HW,C]
    auto q = g.linear(x, p.w_q, zero_d);         // [B,HW,D]
    auto k = g.linear(tokens, p.w_k, zero_d);    // [B,N,D]
    auto v = g.linear(tokens, p.w_v, zero_d);
    auto logits = g.affine(g.matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))), T(0));
    auto attn = g.softmax_rows(logits);
    auto ctx = g.matmul(attn, v);                // [B,HW,D]
    auto proj = g.linear(ctx, p.w_out, zero_c);  // [B,HW,C]
    auto out = g.add(x, proj);
    return g.bnc_to_bchw(out, h, w);
}

template <typename T>
typename Graph<T>::Ref semantic_encode_g(Graph<T>& g, typename Graph<T>::Ref i_obj,
                                         const SemanticEncoderRefs<T>& p) {
    auto h = i_obj;
    for (int i = 0; i < 3; ++i) h = g.relu(g.conv2d(h, p.conv_w[static_cast<std::size_t>(i)],
                                                    p.conv_b[static_cast<std::size_t>(i)], 2, 1));
    const auto& hv = g.value(h);
    const int b = hv.dim(0);
    const int d_sem = g.value(p.key_w).dim(1);

    auto feat = g.bchw_to_bnc(h);                   // [B, P, c3]
    auto keys = g.linear(feat, p.key_w, p.key_b);   // [B, P, d_sem]
    auto vals = g.linear(feat, p.val_w, p.val_b);
    auto queries = g.broadcast_rows(p.queries, b);  // [B, n_tok, d_sem]
    auto logits = g.affine(g.matmul_nt(queries, keys),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_sem))), T(0));
    auto attn = g.softmax_rows(logits);
    return g.matmul(attn, vals);                    // [B, n_tok, d_sem]
}

template <typename T>
TensorT<T> semantic_cross_attention(const TensorT<T>& f_b, const SemanticTokens<T>& tokens,
                                    const CrossAttnParams<T>& p) {
    Graph<T> g;
    CrossAttnRefs<T> refs{g.leaf(p.w_q), g.leaf(p.w_k), g.leaf(p.w_v), g.leaf(p.w_out)};
    auto out = semantic_cross_attention_g(g, g.leaf(f_b), g.leaf(tokens.tokens), refs);
    return g.value(out);
}

template <typename T>
SemanticTokens<T> semantic_encode(const TensorT<T>& i_obj, const SemanticEncoderParams<T>& p) {
    Graph<T> g;
    SemanticEncoderRefs<T> refs;
    for (std::size_t i = 0; i < 3; ++i) {
        refs.conv_w[i] = g.leaf(p.conv_w[i]);
        refs.conv_b[i] = g.leaf(p.conv_b[i]);
    }
    refs.key_w = g.leaf(p.key_w);
    refs.key_b = g.leaf(p.key_b);
    refs.val_w = g.leaf(p.val_w);
    refs.val_b = g.leaf(p.val_b);
    refs.queries = g.leaf(p.queries);
    auto out = semantic_encode_g(g, g.leaf(i_obj), refs);
    return SemanticTokens<T>{g.value(out)};
}

template <typename T>
TensorT<T> attention_map(const TensorT<T>& f_b, const SemanticTokens<T>& tokens,
                         const CrossAttnParams<T>& p) {
    if (f_b.ndim() != 4) throw std::invalid_argument("attention_map: expects [B,C,h,w]");
    const int b = f_b.dim(0), h = f_b.dim(2), w = f_b.dim(3);
    const int d = p.w_q.dim(1);
    const int n_tok = tokens.tokens.dim(1);

    Graph<T> g;
    auto zero_d = g.leaf(TensorT<T>({d}), false);
    auto x = g.bchw_to_bnc(g.leaf(f_b));
    auto q = g.linear(x, g.leaf(p.w_q), zero_d);
    auto k = g.linear(g.leaf(tokens.tokens), g.leaf(p.w_k), zero_d);
    auto logits = g.affine(g.matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))), T(0));
    TensorT<T> attn = softmax_rows(g.value(logits));  // [B,HW,N]

    TensorT<T> map({b, h, w});
    const int hw = h * w;
    for (int i = 0; i < b; ++i) {
        T mn = T(1), mx = T(0);
        for (int pix = 0; pix < hw; ++pix) {
            const T* row = attn.data.data() + (static_cast<std::size_t>(i) * hw + pix) * n_tok;
            T m = row[0];
            for (int tk = 1; tk < n_tok; ++tk) m = std::max(m, row[tk]);
            map.data[static_cast<std::size_t>(i) * hw + pix] = m;
            mn = std::min(mn, m);
            mx = std::max(mx, m);
        }
        T* dst = map.data.data() + static_cast<std::size_t>(i) * hw;
        if (mx - mn < T(1e-12)) {
            std::fill(dst, dst + hw, T(1));
        } else {
            const T inv = T(1) / (mx - mn);
            for (int pix = 0; pix < hw; ++pix) dst[pix] = (dst[pix] - mn) * inv;
        }
    }
    return map;
}

#define DGAD_INSTANTIATE_ENCODER(T)                                                                \
    template TensorT<T> assemble_input<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&); \
    template TensorT<T> expand_input_layer<T>(const TensorT<T>&, const TensorT<T>&, int,           \
                                              const std::vector<int>&);                            \
    template Graph<T>::Ref semantic_cross_attention_g<T>(Graph<T>&, Graph<T>::Ref, Graph<T>::Ref,  \
                                                         const CrossAttnRefs<T>&);                 \
    template Graph<T>::Ref semantic_encode_g<T>(Graph<T>&, Graph<T>::Ref,                          \
                                                const SemanticEncoderRefs<T>&);                    \
    template TensorT<T> semantic_cross_attention<T>(const TensorT<T>&, const SemanticTokens<T>&,   \
                                                    const CrossAttnParams<T>&);                    \
    template SemanticTokens<T> semantic_encode<T>(const TensorT<T>&, const SemanticEncoderParams<T>&); \
    template TensorT<T> attention_map<T>(const TensorT<T>&, const SemanticTokens<T>&,              \
                                         const CrossAttnParams<T>&);

DGAD_INSTANTIATE_ENCODER(float)
DGAD_INSTANTIATE_ENCODER(double)
#undef DGAD_INSTANTIATE_ENCODER

}  // namespace dgad
