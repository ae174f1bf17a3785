#include "dgad/graph.hpp"

#include <algorithm>
#include <cmath>

namespace dgad {

template <typename T>
typename Graph<T>::Ref Graph<T>::push(TensorT<T> val, bool needs, std::function<void(Graph&, Ref)> bw) {
    nodes_.push_back(Node{std::move(val), {}, needs, std::move(bw)});
    return static_cast<Ref>(nodes_.size() - 1);
}

template <typename T>
TensorT<T>& Graph<T>::gbuf(Ref r) {
    Node& n = nodes_[static_cast<std::size_t>(r)];
    if (n.grad.data.empty()) {
        n.grad.shape = n.val.shape;
        n.grad.data.assign(n.val.numel(), T(0));
    }
    return n.grad;
}

template <typename T>
void Graph<T>::accum(Ref parent, const TensorT<T>& g) {
    Node& p = nodes_[static_cast<std::size_t>(parent)];
    if (!p.needs_grad) return;
    TensorT<T>& dst = gbuf(parent);
    for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
const TensorT<T>& Graph<T>::grad(Ref r) {
    return gbuf(r);
}

template <typename T>
typename Graph<T>::Ref Graph<T>::leaf(TensorT<T> value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

template <typename T>
typename Graph<T>::Ref Graph<T>::add(Ref a, Ref b) {
    require_same_shape(at(a).val, at(b).val, "graph.add");
    TensorT<T> out = at(a).val;
    const TensorT<T>& vb = at(b).val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b](Graph& g, Ref self) {
        g.accum(a, g.at(self).grad);
        g.accum(b, g.at(self).grad);
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::sub(Ref a, Ref b) {
    require_same_shape(at(a).val, at(b).val, "graph.sub");
    TensorT<T> out = at(a).val;
    const TensorT<T>& vb = at(b).val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        g.accum(a, gr);
        if (g.at(b).needs_grad) {
            TensorT<T>& dst = g.gbuf(b);
            for (std::size_t i = 0; i < gr.numel(); ++i) dst.data[i] -= gr.data[i];
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::mul(Ref a, Ref b) {
    require_same_shape(at(a).val, at(b).val, "graph.mul");
    TensorT<T> out = at(a).val;
    const TensorT<T>& vb = at(b).val;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        if (g.at(a).needs_grad) {
            TensorT<T>& da = g.gbuf(a);
            const TensorT<T>& vb = g.at(b).val;
            for (std::size_t i = 0; i < gr.numel(); ++i) da.data[i] += gr.data[i] * vb.data[i];
        }
        if (g.at(b).needs_grad) {
            TensorT<T>& db = g.gbuf(b);
            const TensorT<T>& va = g.at(a).val;
            for (std::size_t i = 0; i < gr.numel(); ++i) db.data[i] += gr.data[i] * va.data[i];
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::affine(Ref a, T scale, T shift) {
    TensorT<T> out = at(a).val;
    for (auto& v : out.data) v = scale * v + shift;
    return push(std::move(out), at(a).needs_grad, [a, scale](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        for (std::size_t i = 0; i < gr.numel(); ++i) da.data[i] += scale * gr.data[i];
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::relu(Ref a) {
    TensorT<T> out = at(a).val;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), at(a).needs_grad, [a](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        const TensorT<T>& va = g.at(a).val;
        TensorT<T>& da = g.gbuf(a);
        for (std::size_t i = 0; i < gr.numel(); ++i)
            if (va.data[i] > T(0)) da.data[i] += gr.data[i];
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::sigmoid(Ref a) {
    TensorT<T> out = at(a).val;
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return push(std::move(out), at(a).needs_grad, [a](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        const TensorT<T>& y = g.at(self).val;
        TensorT<T>& da = g.gbuf(a);
        for (std::size_t i = 0; i < gr.numel(); ++i)
            da.data[i] += gr.data[i] * y.data[i] * (T(1) - y.data[i]);
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::clamp(Ref a, T lo, T hi) {
    if (!(lo < hi)) throw std::invalid_argument("graph.clamp: lo must be < hi");
    TensorT<T> out = at(a).val;
    for (auto& v : out.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(out), at(a).needs_grad, [a, lo, hi](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        const TensorT<T>& va = g.at(a).val;
        TensorT<T>& da = g.gbuf(a);
        for (std::size_t i = 0; i < gr.numel(); ++i)
            if (va.data[i] > lo && va.data[i] < hi) da.data[i] += gr.data[i];
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::reshape(Ref a, std::vector<int> shape) {
    if (numel_of(shape) != at(a).val.numel())
        throw std::invalid_argument("graph.reshape: element count mismatch");
    TensorT<T> out;
    out.shape = std::move(shape);
    out.data = at(a).val.data;
    return push(std::move(out), at(a).needs_grad, [a](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        for (std::size_t i = 0; i < gr.numel(); ++i) da.data[i] += gr.data[i];
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::bchw_to_bnc(Ref a) {
    const TensorT<T>& x = at(a).val;
    if (x.ndim() != 4) throw std::invalid_argument("graph.bchw_to_bnc: expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int hw = h * w;
    TensorT<T> out({b, hw, c});
    for (int i = 0; i < b; ++i) {
        const T* src = x.data.data() + static_cast<std::size_t>(i) * c * hw;
        T* dst = out.data.data() + static_cast<std::size_t>(i) * c * hw;
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p)
                dst[static_cast<std::size_t>(p) * c + ch] = src[static_cast<std::size_t>(ch) * hw + p];
    }
    return push(std::move(out), at(a).needs_grad, [a, b, c, hw](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        for (int i = 0; i < b; ++i) {
            const T* src = gr.data.data() + static_cast<std::size_t>(i) * c * hw;
            T* dst = da.data.data() + static_cast<std::size_t>(i) * c * hw;
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    dst[static_cast<std::size_t>(ch) * hw + p] += src[static_cast<std::size_t>(p) * c + ch];
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::bnc_to_bchw(Ref a, int h, int w) {
    const TensorT<T>& x = at(a).val;
    if (x.ndim() != 3 || x.dim(1) != h * w)
        throw std::invalid_argument("graph.bnc_to_bchw: expects [B,H*W,C]");
    const int b = x.dim(0), c = x.dim(2);
    const int hw = h * w;
    TensorT<T> out({b, c, h, w});
    for (int i = 0; i < b; ++i) {
        const T* src = x.data.data() + static_cast<std::size_t>(i) * c * hw;
        T* dst = out.data.data() + static_cast<std::size_t>(i) * c * hw;
        for (int p = 0; p < hw; ++p)
            for (int ch = 0; ch < c; ++ch)
                dst[static_cast<std::size_t>(ch) * hw + p] = src[static_cast<std::size_t>(p) * c + ch];
    }
    return push(std::move(out), at(a).needs_grad, [a, b, c, hw](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        for (int i = 0; i < b; ++i) {
            const T* src = gr.data.data() + static_cast<std::size_t>(i) * c * hw;
            T* dst = da.data.data() + static_cast<std::size_t>(i) * c * hw;
            for (int p = 0; p < hw; ++p)
                for (int ch = 0; ch < c; ++ch)
                    dst[static_cast<std::size_t>(p) * c + ch] += src[static_cast<std::size_t>(ch) * hw + p];
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::concat_ch(Ref a, Ref b) {
    const TensorT<T>& x = at(a).val;
    const TensorT<T>& y = at(b).val;
    if (x.ndim() != 4 || y.ndim() != 4 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) ||
        x.dim(3) != y.dim(3))
        throw std::invalid_argument("graph.concat_ch: incompatible shapes " + shape_str(x.shape) +
                                    " vs " + shape_str(y.shape));
    const int bb = x.dim(0), c1 = x.dim(1), c2 = y.dim(1), hw = x.dim(2) * x.dim(3);
    TensorT<T> out({bb, c1 + c2, x.dim(2), x.dim(3)});
    for (int i = 0; i < bb; ++i) {
        T* dst = out.data.data() + static_cast<std::size_t>(i) * (c1 + c2) * hw;
        std::copy_n(x.data.data() + static_cast<std::size_t>(i) * c1 * hw, static_cast<std::size_t>(c1) * hw, dst);
        std::copy_n(y.data.data() + static_cast<std::size_t>(i) * c2 * hw, static_cast<std::size_t>(c2) * hw,
                    dst + static_cast<std::size_t>(c1) * hw);
    }
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b, bb, c1, c2, hw](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        if (g.at(a).needs_grad) {
            TensorT<T>& da = g.gbuf(a);
            for (int i = 0; i < bb; ++i) {
                const T* src = gr.data.data() + static_cast<std::size_t>(i) * (c1 + c2) * hw;
                T* dst = da.data.data() + static_cast<std::size_t>(i) * c1 * hw;
                for (std::size_t j = 0; j < static_cast<std::size_t>(c1) * hw; ++j) dst[j] += src[j];
            }
        }
        if (g.at(b).needs_grad) {
            TensorT<T>& db = g.gbuf(b);
            for (int i = 0; i < bb; ++i) {
                const T* src = gr.data.data() + static_cast<std::size_t>(i) * (c1 + c2) * hw +
                               static_cast<std::size_t>(c1) * hw;
                T* dst = db.data.data() + static_cast<std::size_t>(i) * c2 * hw;
                for (std::size_t j = 0; j < static_cast<std::size_t>(c2) * hw; ++j) dst[j] += src[j];
            }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::broadcast_rows(Ref a, int batch) {
    const TensorT<T>& x = at(a).val;
    if (x.ndim() != 2) throw std::invalid_argument("graph.broadcast_rows: expects [N,D]");
    const int n = x.dim(0), d = x.dim(1);
    TensorT<T> out({batch, n, d});
    for (int i = 0; i < batch; ++i)
        std::copy_n(x.data.data(), x.numel(), out.data.data() + static_cast<std::size_t>(i) * x.numel());
    return push(std::move(out), at(a).needs_grad, [a, batch](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        const std::size_t n = da.numel();
        for (int i = 0; i < batch; ++i) {
            const T* src = gr.data.data() + static_cast<std::size_t>(i) * n;
            for (std::size_t j = 0; j < n; ++j) da.data[j] += src[j];
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::upsample_nearest2x(Ref a) {
    const TensorT<T>& x = at(a).val;
    if (x.ndim() != 4) throw std::invalid_argument("graph.upsample_nearest2x: expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<T> out({b, c, 2 * h, 2 * w});
    for (int i = 0; i < b * c; ++i) {
        const T* src = x.data.data() + static_cast<std::size_t>(i) * h * w;
        T* dst = out.data.data() + static_cast<std::size_t>(i) * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const T v = src[y * w + xx];
                T* d = dst + static_cast<std::size_t>(2 * y) * 2 * w + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
    }
    return push(std::move(out), at(a).needs_grad, [a, b, c, h, w](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        TensorT<T>& da = g.gbuf(a);
        for (int i = 0; i < b * c; ++i) {
            const T* src = gr.data.data() + static_cast<std::size_t>(i) * 4 * h * w;
            T* dst = da.data.data() + static_cast<std::size_t>(i) * h * w;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const T* s = src + static_cast<std::size_t>(2 * y) * 2 * w + 2 * xx;
                    dst[y * w + xx] += (s[0] + s[1]) + (s[2 * w] + s[2 * w + 1]);
                }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::linear(Ref x, Ref w, Ref b) {
    TensorT<T> out = dgad::linear(at(x).val, at(w).val, at(b).val);
    bool needs = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
    const int din = at(w).val.dim(0), dout = at(w).val.dim(1);
    const int rows = static_cast<int>(at(x).val.numel() / static_cast<std::size_t>(din));
    return push(std::move(out), needs, [x, w, b, din, dout, rows](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        if (g.at(x).needs_grad)
            kernels::gemm_nt(rows, din, dout, gr.data.data(), g.at(w).val.data.data(),
                             g.gbuf(x).data.data(), true);
        if (g.at(w).needs_grad)
            kernels::gemm_tn(din, dout, rows, g.at(x).val.data.data(), gr.data.data(),
                             g.gbuf(w).data.data(), true);
        if (g.at(b).needs_grad) {
            TensorT<T>& db = g.gbuf(b);
            for (int r = 0; r < rows; ++r) {
                const T* src = gr.data.data() + static_cast<std::size_t>(r) * dout;
                for (int j = 0; j < dout; ++j) db.data[j] += src[j];
            }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::matmul(Ref a, Ref b) {
    const TensorT<T>& va = at(a).val;
    const TensorT<T>& vb = at(b).val;
    if (va.ndim() != 3 || vb.ndim() != 3 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(1))
        throw std::invalid_argument("graph.matmul: incompatible " + shape_str(va.shape) + " x " +
                                    shape_str(vb.shape));
    const int bb = va.dim(0), n = va.dim(1), k = va.dim(2), m = vb.dim(2);
    TensorT<T> out({bb, n, m});
    for (int i = 0; i < bb; ++i)
        kernels::gemm_nn(n, m, k, va.data.data() + static_cast<std::size_t>(i) * n * k,
                         vb.data.data() + static_cast<std::size_t>(i) * k * m,
                         out.data.data() + static_cast<std::size_t>(i) * n * m, false);
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b, bb, n, k, m](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        for (int i = 0; i < bb; ++i) {
            const T* gi = gr.data.data() + static_cast<std::size_t>(i) * n * m;
            if (g.at(a).needs_grad)
                kernels::gemm_nt(n, k, m, gi, g.at(b).val.data.data() + static_cast<std::size_t>(i) * k * m,
                                 g.gbuf(a).data.data() + static_cast<std::size_t>(i) * n * k, true);
            if (g.at(b).needs_grad)
                kernels::gemm_tn(k, m, n, g.at(a).val.data.data() + static_cast<std::size_t>(i) * n * k, gi,
                                 g.gbuf(b).data.data() + static_cast<std::size_t>(i) * k * m, true);
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::matmul_nt(Ref a, Ref b) {
    const TensorT<T>& va = at(a).val;
    const TensorT<T>& vb = at(b).val;
    if (va.ndim() != 3 || vb.ndim() != 3 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2))
        throw std::invalid_argument("graph.matmul_nt: incompatible " + shape_str(va.shape) + " x " +
                                    shape_str(vb.shape));
    const int bb = va.dim(0), n = va.dim(1), k = va.dim(2), m = vb.dim(1);
    TensorT<T> out({bb, n, m});
    for (int i = 0; i < bb; ++i)
        kernels::gemm_nt(n, m, k, va.data.data() + static_cast<std::size_t>(i) * n * k,
                         vb.data.data() + static_cast<std::size_t>(i) * m * k,
                         out.data.data() + static_cast<std::size_t>(i) * n * m, false);
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [a, b, bb, n, k, m](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        for (int i = 0; i < bb; ++i) {
            const T* gi = gr.data.data() + static_cast<std::size_t>(i) * n * m;
            if (g.at(a).needs_grad)
                kernels::gemm_nn(n, k, m, gi, g.at(b).val.data.data() + static_cast<std::size_t>(i) * m * k,
                                 g.gbuf(a).data.data() + static_cast<std::size_t>(i) * n * k, true);
            if (g.at(b).needs_grad)
                kernels::gemm_tn(m, k, n, gi, g.at(a).val.data.data() + static_cast<std::size_t>(i) * n * k,
                                 g.gbuf(b).data.data() + static_cast<std::size_t>(i) * m * k, true);
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::conv2d(Ref x, Ref w, Ref b, int stride, int padding) {
    TensorT<T> out = dgad::conv2d(at(x).val, at(w).val, at(b).val, padding, stride);
    bool needs = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
    return push(std::move(out), needs, [x, w, b, stride, padding](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        const TensorT<T>& vx = g.at(x).val;
        const TensorT<T>& vw = g.at(w).val;
        const int bb = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
        const int cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
        const int ho = gr.dim(2), wo = gr.dim(3);
        const int patch = cin * kh * kw;
        const int plane = ho * wo;
        std::vector<T> col(static_cast<std::size_t>(patch) * plane);
        std::vector<T> dcol;
        if (g.at(x).needs_grad) dcol.resize(static_cast<std::size_t>(patch) * plane);
        for (int i = 0; i < bb; ++i) {
            const T* gi = gr.data.data() + static_cast<std::size_t>(i) * cout * plane;
            if (g.at(w).needs_grad || g.at(x).needs_grad)
                kernels::im2col(vx.data.data() + static_cast<std::size_t>(i) * cin * h * wd, cin, h, wd,
                                kh, kw, stride, padding, col.data());
            if (g.at(w).needs_grad)
                kernels::gemm_nt(cout, patch, plane, gi, col.data(), g.gbuf(w).data.data(), true);
            if (g.at(x).needs_grad) {
                kernels::gemm_tn(patch, plane, cout, vw.data.data(), gi, dcol.data(), false);
                kernels::col2im(dcol.data(), cin, h, wd, kh, kw, stride, padding,
                                g.gbuf(x).data.data() + static_cast<std::size_t>(i) * cin * h * wd);
            }
            if (g.at(b).needs_grad) {
                TensorT<T>& db = g.gbuf(b);
                for (int oc = 0; oc < cout; ++oc) {
                    const T* pl = gi + static_cast<std::size_t>(oc) * plane;
                    T s = 0;
                    for (int p = 0; p < plane; ++p) s += pl[p];
                    db.data[oc] += s;
                }
            }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::softmax_rows(Ref a) {
    TensorT<T> out = dgad::softmax_rows(at(a).val);
    const int n = out.dim(out.ndim() - 1);
    return push(std::move(out), at(a).needs_grad, [a, n](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const TensorT<T>& gr = g.at(self).grad;
        const TensorT<T>& y = g.at(self).val;
        TensorT<T>& da = g.gbuf(a);
        const std::size_t rows = y.numel() / static_cast<std::size_t>(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yv = y.data.data() + r * n;
            const T* gv = gr.data.data() + r * n;
            T dot = 0;
            for (int j = 0; j < n; ++j) dot += yv[j] * gv[j];
            T* dst = da.data.data() + r * n;
            for (int j = 0; j < n; ++j) dst[j] += yv[j] * (gv[j] - dot);
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::mul_gate(Ref x, Ref gmap) {
    const TensorT<T>& vx = at(x).val;
    const TensorT<T>& vg = at(gmap).val;
    if (vx.ndim() != 4 || vg.ndim() != 4 || vg.dim(1) != 1 || vx.dim(0) != vg.dim(0) ||
        vx.dim(2) != vg.dim(2) || vx.dim(3) != vg.dim(3))
        throw std::invalid_argument("graph.mul_gate: expects [B,C,H,W] and [B,1,H,W]");
    const int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    TensorT<T> out = vx;
    for (int i = 0; i < b; ++i) {
        const T* gp = vg.data.data() + static_cast<std::size_t>(i) * hw;
        T* dst = out.data.data() + static_cast<std::size_t>(i) * c * hw;
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p) dst[static_cast<std::size_t>(ch) * hw + p] *= gp[p];
    }
    bool needs = at(x).needs_grad || at(gmap).needs_grad;
    return push(std::move(out), needs, [x, gmap, b, c, hw](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        if (g.at(x).needs_grad) {
            TensorT<T>& dx = g.gbuf(x);
            const TensorT<T>& vg = g.at(gmap).val;
            for (int i = 0; i < b; ++i) {
                const T* gp = vg.data.data() + static_cast<std::size_t>(i) * hw;
                const T* src = gr.data.data() + static_cast<std::size_t>(i) * c * hw;
                T* dst = dx.data.data() + static_cast<std::size_t>(i) * c * hw;
                for (int ch = 0; ch < c; ++ch)
                    for (int p = 0; p < hw; ++p)
                        dst[static_cast<std::size_t>(ch) * hw + p] += src[static_cast<std::size_t>(ch) * hw + p] * gp[p];
            }
        }
        if (g.at(gmap).needs_grad) {
            TensorT<T>& dg = g.gbuf(gmap);
            const TensorT<T>& vx = g.at(x).val;
            for (int i = 0; i < b; ++i) {
                const T* src = gr.data.data() + static_cast<std::size_t>(i) * c * hw;
                const T* xv = vx.data.data() + static_cast<std::size_t>(i) * c * hw;
                T* dst = dg.data.data() + static_cast<std::size_t>(i) * hw;
                for (int p = 0; p < hw; ++p) {
                    T s = 0;
                    for (int ch = 0; ch < c; ++ch)
                        s += src[static_cast<std::size_t>(ch) * hw + p] * xv[static_cast<std::size_t>(ch) * hw + p];
                    dst[p] += s;
                }
            }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::add_time(Ref x, Ref v) {
    const TensorT<T>& vx = at(x).val;
    const TensorT<T>& vv = at(v).val;
    if (vx.ndim() != 4 || vv.ndim() != 2 || vx.dim(0) != vv.dim(0) || vx.dim(1) != vv.dim(1))
        throw std::invalid_argument("graph.add_time: expects [B,C,H,W] and [B,C]");
    const int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    TensorT<T> out = vx;
    for (int i = 0; i < b; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const T t = vv.data[static_cast<std::size_t>(i) * c + ch];
            T* dst = out.data.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
            for (int p = 0; p < hw; ++p) dst[p] += t;
        }
    bool needs = at(x).needs_grad || at(v).needs_grad;
    return push(std::move(out), needs, [x, v, b, c, hw](Graph& g, Ref self) {
        const TensorT<T>& gr = g.at(self).grad;
        g.accum(x, gr);
        if (g.at(v).needs_grad) {
            TensorT<T>& dv = g.gbuf(v);
            for (int i = 0; i < b; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    const T* src = gr.data.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
                    T s = 0;
                    for (int p = 0; p < hw; ++p) s += src[p];
                    dv.data[static_cast<std::size_t>(i) * c + ch] += s;
                }
        }
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::sum_all(Ref a) {
    const TensorT<T>& va = at(a).val;
    T s = 0;
    for (T v : va.data) s += v;
    return push(TensorT<T>::scalar(s), at(a).needs_grad, [a](Graph& g, Ref self) {
        if (!g.at(a).needs_grad) return;
        const T gv = g.at(self).grad.data[0];
        TensorT<T>& da = g.gbuf(a);
        for (auto& v : da.data) v += gv;
    });
}

template <typename T>
typename Graph<T>::Ref Graph<T>::mean_sq_diff(Ref a, Ref b) {
    require_same_shape(at(a).val, at(b).val, "graph.mean_sq_diff");
    const TensorT<T>& va = at(a).val;
    const TensorT<T>& vb = at(b).val;
    const std::size_t n = va.numel();
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = va.data[i] - vb.data[i];
        s += d * d;
    }
    s /= static_cast<T>(n);
    bool needs = at(a).needs_grad || at(b).needs_grad;
    return push(TensorT<T>::scalar(s), needs, [a, b, n](Graph& g, Ref self) {
        const T gv = g.at(self).grad.data[0];
        const TensorT<T>& va = g.at(a).val;
        const TensorT<T>& vb = g.at(b).val;
        const T k = gv * T(2) / static_cast<T>(n);
        if (g.at(a).needs_grad) {
            TensorT<T>& da = g.gbuf(a);
            for (std::size_t i = 0; i < n; ++i) da.data[i] += k * (va.data[i] - vb.data[i]);
        }
        if (g.at(b).needs_grad) {
            TensorT<T>& db = g.gbuf(b);
            for (std::size_t i = 0; i < n; ++i) db.data[i] -= k * (va.data[i] - vb.data[i]);
        }
    });
}

template <typename T>
void Graph<T>::backward(Ref loss) {
    if (at(loss).val.numel() != 1)
        throw std::invalid_argument("graph.backward: loss must be scalar");
    gbuf(loss).data[0] = T(1);
    for (Ref i = loss; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.bw || !n.needs_grad || n.grad.data.empty()) continue;
        n.bw(*this, i);
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace dgad
