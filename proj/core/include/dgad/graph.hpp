#pragma once

#include <functional>
#include <vector>

#include "dgad/ops.hpp"
#include "dgad/tensor.hpp"

namespace dgad {

/// Eager tape autodiff. Values are computed when an op is recorded;
/// backward() walks the tape in reverse creation order. Rebuilt per step:
/// leaves are bound fresh each forward, so parameters live outside the graph.
///
/// All kernels reduce per output element in a fixed order, so a graph forward
/// and backward are bit-deterministic for a given input, at any thread count.
template <typename T>
class Graph {
public:
    using Ref = int;

    Ref leaf(TensorT<T> value, bool needs_grad = false);

    // elementwise
    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref mul(Ref a, Ref b);
    Ref affine(Ref a, T scale, T shift);   // scale*a + shift
    Ref relu(Ref a);
    Ref sigmoid(Ref a);
    Ref clamp(Ref a, T lo, T hi);          // zero gradient where saturated

    // shape
    Ref reshape(Ref a, std::vector<int> shape);
    Ref bchw_to_bnc(Ref a);                // [B,C,H,W] -> [B,H*W,C]
    Ref bnc_to_bchw(Ref a, int h, int w);  // inverse
    Ref concat_ch(Ref a, Ref b);           // along dim 1 of [B,C,H,W]
    Ref broadcast_rows(Ref a, int batch);  // [N,D] -> [batch,N,D]
    Ref upsample_nearest2x(Ref a);

    // linear algebra
    Ref linear(Ref x, Ref w, Ref b);           // [...,Din] x [Din,Dout] + [Dout]
    Ref matmul(Ref a, Ref b);                  // [B,N,K] x [B,K,M]
    Ref matmul_nt(Ref a, Ref b);               // [B,N,K] x [B,M,K]^T
    Ref conv2d(Ref x, Ref w, Ref b, int stride, int padding);
    Ref softmax_rows(Ref a);

    // channel broadcasts
    Ref mul_gate(Ref x, Ref g);   // [B,C,H,W] * [B,1,H,W]
    Ref add_time(Ref x, Ref v);   // [B,C,H,W] + [B,C] over spatial dims

    // reductions
    Ref sum_all(Ref a);                // scalar
    Ref mean_sq_diff(Ref a, Ref b);    // scalar, mean((a-b)^2)

    void backward(Ref loss);

    const TensorT<T>& value(Ref r) const { return nodes_[static_cast<std::size_t>(r)].val; }
    /// Gradient of the last backward() w.r.t. node r (zeros if untouched).
    const TensorT<T>& grad(Ref r);
    bool needs_grad(Ref r) const { return nodes_[static_cast<std::size_t>(r)].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorT<T> val;
        TensorT<T> grad;  // lazily allocated
        bool needs_grad = false;
        std::function<void(Graph&, Ref)> bw;
    };
    std::vector<Node> nodes_;

    Ref push(TensorT<T> val, bool needs_grad, std::function<void(Graph&, Ref)> bw);
    TensorT<T>& gbuf(Ref r);
    void accum(Ref parent, const TensorT<T>& g);
    const Node& at(Ref r) const { return nodes_[static_cast<std::size_t>(r)]; }
};

using Graph32 = Graph<float>;
using Graph64 = Graph<double>;

}  // namespace dgad
