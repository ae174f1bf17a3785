#include "dgad/dense_attn.hpp"

#include <cmath>

namespace dgad {

namespace {

template <typename T>
void check_shape_preserving(const ConvLayer<T>& layer, const char* what) {
    if (layer.w.ndim() != 4) throw std::invalid_argument(std::string(what) + ": kernel must be 4-d");
    const int k = layer.w.dim(2);
    if (layer.w.dim(3) != k || k % 2 == 0)
        throw std::invalid_argument(std::string(what) + ": kernel must be square with odd size");
    if (layer.w.dim(0) != layer.w.dim(1))
        throw std::invalid_argument(std::string(what) + ": projection conv must preserve channels");
    if (layer.b.numel() != static_cast<std::size_t>(layer.w.dim(0)))
        throw std::invalid_argument(std::string(what) + ": bias size mismatch");
}

}  // namespace

template <typename T>
void DenseAttnParams<T>::validate() const {
    if (!(clamp_lo < clamp_hi))
        throw std::invalid_argument("dense_attn: clamp interval requires lo < hi");
    for (const ProjStack<T>* s : {&q, &k, &v}) {
        check_shape_preserving(s->conv1x1, "dense_attn.conv1x1");
        if (s->conv1x1.w.dim(2) != 1) throw std::invalid_argument("dense_attn: first conv must be 1x1");
        for (const auto& l : s->conv3x3) {
            check_shape_preserving(l, "dense_attn.conv3x3");
            if (l.w.dim(2) != 3) throw std::invalid_argument("dense_attn: stack convs must be 3x3");
        }
    }
    if (fc1_w.ndim() != 2 || fc2_w.ndim() != 2 || fc2_w.dim(1) != 1 ||
        fc1_w.dim(1) != fc2_w.dim(0))
        throw std::invalid_argument("dense_attn: gate MLP shapes inconsistent");
}

template <typename T>
typename Graph<T>::Ref project_g(Graph<T>& g, typename Graph<T>::Ref f, const ProjStackRefs<T>& stack) {
    const auto in_shape = g.value(f).shape;
    auto h = g.conv2d(f, stack.c1_w, stack.c1_b, 1, 0);
    for (const auto& [w, b] : stack.c3) h = g.conv2d(h, w, b, 1, 1);
    if (g.value(h).shape != in_shape)
        throw std::invalid_argument("dense_attn.project: stack is not shape-preserving");
    return h;
}

template <typename T>
std::pair<typename Graph<T>::Ref, typename Graph<T>::Ref> gate_g(Graph<T>& g,
                                                                 typename Graph<T>::Ref q_proj,
                                                                 const DenseAttnRefs<T>& p,
                                                                 const DenseAttnHooks* hooks) {
    const auto& qv = g.value(q_proj);
    const int b = qv.dim(0), h = qv.dim(2), w = qv.dim(3);

    typename Graph<T>::Ref alpha;
    if (hooks && hooks->alpha_const.has_value()) {
        alpha = g.leaf(TensorT<T>::full({b, 1, h, w}, static_cast<T>(*hooks->alpha_const)), false);
    } else {
        auto x = g.bchw_to_bnc(q_proj);                        // [B,HW,C]
        auto h1 = g.relu(g.linear(x, p.fc1_w, p.fc1_b));       // [B,HW,hidden]
        auto h2 = g.linear(h1, p.fc2_w, p.fc2_b);              // [B,HW,1]
        alpha = g.reshape(g.sigmoid(h2), {b, 1, h, w});
    }
    auto one_minus = g.affine(alpha, T(-1), T(1));
    auto beta = (hooks && hooks->disable_clamp)
                    ? one_minus
                    : g.clamp(one_minus, static_cast<T>(p.clamp_lo), static_cast<T>(p.clamp_hi));
    return {alpha, beta};
}

template <typename T>
typename Graph<T>::Ref dense_attention_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                         typename Graph<T>::Ref f_r, const DenseAttnRefs<T>& p,
                                         const DenseAttnHooks* hooks) {
    require_same_shape(g.value(f_b), g.value(f_r), "dense_attention");
    const auto& fv = g.value(f_b);
    const int c = fv.dim(1), h = fv.dim(2), w = fv.dim(3);

    auto q = project_g(g, f_b, p.q);
    auto k = project_g(g, f_r, p.k);
    auto v = project_g(g, f_r, p.v);
    auto [alpha, beta] = gate_g(g, q, p, hooks);

    auto qn = g.bchw_to_bnc(q);
    auto kn = g.bchw_to_bnc(k);
    auto vn = g.bchw_to_bnc(v);
    auto logits = g.affine(g.matmul_nt(qn, kn), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))), T(0));
    auto attn = g.bnc_to_bchw(g.matmul(g.softmax_rows(logits), vn), h, w);

    return g.add(g.mul_gate(attn, alpha), g.mul_gate(q, beta));
}

template <typename T>
typename Graph<T>::Ref dense_attention_ungated_g(Graph<T>& g, typename Graph<T>::Ref f_b,
                                                 typename Graph<T>::Ref f_r, const DenseAttnRefs<T>& p) {
    require_same_shape(g.value(f_b), g.value(f_r), "dense_attention");
    const auto& fv = g.value(f_b);
    const int c = fv.dim(1), h = fv.dim(2), w = fv.dim(3);
    auto q = project_g(g, f_b, p.q);
    auto k = project_g(g, f_r, p.k);
    auto v = project_g(g, f_r, p.v);
    auto qn = g.bchw_to_bnc(q);
    auto kn = g.bchw_to_bnc(k);
    auto vn = g.bchw_to_bnc(v);
    auto logits = g.affine(g.matmul_nt(qn, kn), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c))), T(0));
    return g.bnc_to_bchw(g.matmul(g.softmax_rows(logits), vn), h, w);
}

namespace {

template <typename T>
ProjStackRefs<T> bind_stack(Graph<T>& g, const ProjStack<T>& s) {
    ProjStackRefs<T> refs;
    refs.c1_w = g.leaf(s.conv1x1.w);
    refs.c1_b = g.leaf(s.conv1x1.b);
    for (const auto& l : s.conv3x3) refs.c3.push_back({g.leaf(l.w), g.leaf(l.b)});
    return refs;
}

template <typename T>
DenseAttnRefs<T> bind_params(Graph<T>& g, const DenseAttnParams<T>& p) {
    DenseAttnRefs<T> refs;
    refs.q = bind_stack(g, p.q);
    refs.k = bind_stack(g, p.k);
    refs.v = bind_stack(g, p.v);
    refs.fc1_w = g.leaf(p.fc1_w);
    refs.fc1_b = g.leaf(p.fc1_b);
    refs.fc2_w = g.leaf(p.fc2_w);
    refs.fc2_b = g.leaf(p.fc2_b);
    refs.clamp_lo = p.clamp_lo;
    refs.clamp_hi = p.clamp_hi;
    return refs;
}

}  // namespace

template <typename T>
TensorT<T> project(const TensorT<T>& f, const ProjStack<T>& stack) {
    Graph<T> g;
    auto refs = bind_stack(g, stack);
    return g.value(project_g(g, g.leaf(f), refs));
}

template <typename T>
GateMaps<T> gate(const TensorT<T>& q_proj, const DenseAttnParams<T>& p) {
    p.validate();
    Graph<T> g;
    auto refs = bind_params(g, p);
    auto [alpha, beta] = gate_g(g, g.leaf(q_proj), refs, nullptr);
    return GateMaps<T>{g.value(alpha), g.value(beta)};
}

template <typename T>
TensorT<T> mask_process(const TensorT<T>& m, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("mask_process: lo must be < hi");
    return clamp(m, static_cast<T>(lo), static_cast<T>(hi));
}

template <typename T>
TensorT<T> dense_attention(const TensorT<T>& f_b, const TensorT<T>& f_r, const DenseAttnParams<T>& p,
                           const DenseAttnHooks* hooks) {
    p.validate();
    Graph<T> g;
    auto refs = bind_params(g, p);
    return g.value(dense_attention_g(g, g.leaf(f_b), g.leaf(f_r), refs, hooks));
}

#define DGAD_INSTANTIATE_DENSE(T)                                                                  \
    template struct DenseAttnParams<T>;                                                            \
    template Graph<T>::Ref project_g<T>(Graph<T>&, Graph<T>::Ref, const ProjStackRefs<T>&);        \
    template std::pair<Graph<T>::Ref, Graph<T>::Ref> gate_g<T>(Graph<T>&, Graph<T>::Ref,           \
                                                               const DenseAttnRefs<T>&,            \
                                                               const DenseAttnHooks*);             \
    template Graph<T>::Ref dense_attention_g<T>(Graph<T>&, Graph<T>::Ref, Graph<T>::Ref,           \
                                                const DenseAttnRefs<T>&, const DenseAttnHooks*);   \
    template Graph<T>::Ref dense_attention_ungated_g<T>(Graph<T>&, Graph<T>::Ref, Graph<T>::Ref,   \
                                                        const DenseAttnRefs<T>&);                  \
    template TensorT<T> project<T>(const TensorT<T>&, const ProjStack<T>&);                        \
    template GateMaps<T> gate<T>(const TensorT<T>&, const DenseAttnParams<T>&);                    \
    template TensorT<T> mask_process<T>(const TensorT<T>&, double, double);                        \
    template TensorT<T> dense_attention<T>(const TensorT<T>&, const TensorT<T>&,                   \
                                           const DenseAttnParams<T>&, const DenseAttnHooks*);

DGAD_INSTANTIATE_DENSE(float)
DGAD_INSTANTIATE_DENSE(double)
#undef DGAD_INSTANTIATE_DENSE

}  // namespace dgad
