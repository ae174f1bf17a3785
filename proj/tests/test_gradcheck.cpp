#include "doctest.h"

#include <cmath>

#include "dgad/dense_attn.hpp"
#include "dgad/grad_check.hpp"
#include "dgad/rng.hpp"

using namespace dgad;

namespace {

Tensor64 rnd(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    SplitMix64 rng(seed);
    return rand_uniform<double>(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("grad_check validates eps range") {
    auto build = [](Graph64& g, const std::vector<Graph64::Ref>& p) { return g.sum_all(p[0]); };
    CHECK_THROWS_AS((void)grad_check("x", build, {{"p", rnd({2}, 1)}}, 1e-7, 1e-4),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)grad_check("x", build, {{"p", rnd({2}, 1)}}, 1e-3, 1e-4),
                    std::invalid_argument);
}

TEST_CASE("linear layer bias gradient is all-ones under sum loss") {
    std::vector<NamedTensor64> params = {{"w", rnd({3, 2}, 5)}, {"b", rnd({2}, 6)}};
    Tensor64 x = rnd({4, 3}, 7);
    auto build = [x](Graph64& g, const std::vector<Graph64::Ref>& p) {
        return g.sum_all(g.linear(g.leaf(x), p[0], p[1]));
    };
    // analytic gradient of sum(out) w.r.t. b is the row count
    Graph64 g;
    auto wr = g.leaf(params[0].value, true);
    auto br = g.leaf(params[1].value, true);
    auto loss = g.sum_all(g.linear(g.leaf(x), wr, br));
    g.backward(loss);
    for (double v : g.grad(br).data) CHECK(v == doctest::Approx(4.0).epsilon(1e-14));

    auto report = grad_check("linear", build, params, 1e-5, 1e-10);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-10);
}

TEST_CASE("sigmoid derivative at zero is 0.25") {
    std::vector<NamedTensor64> params = {{"x", Tensor64({1}, {0.0})}};
    auto build = [](Graph64& g, const std::vector<Graph64::Ref>& p) {
        return g.sum_all(g.sigmoid(p[0]));
    };
    Graph64 g;
    auto xr = g.leaf(params[0].value, true);
    auto loss = g.sum_all(g.sigmoid(xr));
    g.backward(loss);
    CHECK(g.grad(xr).data[0] == doctest::Approx(0.25).epsilon(1e-14));

    auto report = grad_check("sigmoid0", build, params, 1e-5, 1e-8);
    CHECK(report.passed);
}

TEST_CASE("graph ops pass finite-difference checks") {
    Tensor64 x = rnd({2, 3, 4, 4}, 11, -0.8, 0.8);

    SUBCASE("conv2d") {
        std::vector<NamedTensor64> params = {{"w", rnd({5, 3, 3, 3}, 12, -0.4, 0.4)},
                                             {"b", rnd({5}, 13, -0.2, 0.2)}};
        auto build = [x](Graph64& g, const std::vector<Graph64::Ref>& p) {
            auto out = g.conv2d(g.leaf(x), p[0], p[1], 1, 1);
            return g.mean_sq_diff(out, g.leaf(TensorT<double>::full(g.value(out).shape, 0.1)));
        };
        auto report = grad_check("conv2d", build, params, 1e-5, 1e-7);
        CHECK(report.passed);
    }

    SUBCASE("conv2d input gradient") {
        std::vector<NamedTensor64> params = {{"x", x}};
        Tensor64 w = rnd({2, 3, 3, 3}, 14, -0.4, 0.4);
        Tensor64 b = rnd({2}, 15);
        auto build = [w, b](Graph64& g, const std::vector<Graph64::Ref>& p) {
            auto out = g.conv2d(p[0], g.leaf(w), g.leaf(b), 2, 1);
            return g.mean_sq_diff(out, g.leaf(TensorT<double>(g.value(out).shape)));
        };
        auto report = grad_check("conv2d_dx", build, params, 1e-5, 1e-7);
        CHECK(report.passed);
    }

    SUBCASE("softmax attention chain") {
        std::vector<NamedTensor64> params = {{"q", rnd({1, 3, 4}, 16)},
                                             {"k", rnd({1, 5, 4}, 17)},
                                             {"v", rnd({1, 5, 4}, 18)}};
        auto build = [](Graph64& g, const std::vector<Graph64::Ref>& p) {
            auto logits = g.affine(g.matmul_nt(p[0], p[1]), 0.5, 0.0);
            auto out = g.matmul(g.softmax_rows(logits), p[2]);
            return g.mean_sq_diff(out, g.leaf(TensorT<double>(g.value(out).shape)));
        };
        auto report = grad_check("attention", build, params, 1e-5, 1e-7);
        CHECK(report.passed);
    }

    SUBCASE("gate and broadcast ops") {
        std::vector<NamedTensor64> params = {{"x", rnd({2, 3, 2, 2}, 19)},
                                             {"g", rnd({2, 1, 2, 2}, 20, 0.1, 0.9)},
                                             {"t", rnd({2, 3}, 21)}};
        auto build = [](Graph64& g, const std::vector<Graph64::Ref>& p) {
            auto gated = g.mul_gate(g.add_time(p[0], p[2]), p[1]);
            auto up = g.upsample_nearest2x(gated);
            return g.mean_sq_diff(up, g.leaf(TensorT<double>(g.value(up).shape)));
        };
        auto report = grad_check("gate_ops", build, params, 1e-5, 1e-7);
        CHECK(report.passed);
    }
}

TEST_CASE("full dense-attention block passes grad_check at 1e-4") {
    const int c = 4, h = 2, w = 2, hidden = 4;
    SplitMix64 rng(99);
    auto mk = [&](std::vector<int> s, double scale) {
        auto t = randn<double>(std::move(s), rng);
        for (auto& v : t.data) v *= scale;
        return t;
    };
    std::vector<NamedTensor64> params = {
        {"q.c1.w", mk({c, c, 1, 1}, 0.5)}, {"q.c1.b", mk({c}, 0.1)},
        {"q.c3.w", mk({c, c, 3, 3}, 0.2)}, {"q.c3.b", mk({c}, 0.1)},
        {"k.c1.w", mk({c, c, 1, 1}, 0.5)}, {"k.c1.b", mk({c}, 0.1)},
        {"k.c3.w", mk({c, c, 3, 3}, 0.2)}, {"k.c3.b", mk({c}, 0.1)},
        {"v.c1.w", mk({c, c, 1, 1}, 0.5)}, {"v.c1.b", mk({c}, 0.1)},
        {"v.c3.w", mk({c, c, 3, 3}, 0.2)}, {"v.c3.b", mk({c}, 0.1)},
        {"fc1.w", mk({c, hidden}, 0.5)},   {"fc1.b", mk({hidden}, 0.1)},
        {"fc2.w", mk({hidden, 1}, 0.5)},   {"fc2.b", Tensor64({1}, {-0.85})},
    };
    Tensor64 f_b = mk({1, c, h, w}, 0.8);
    Tensor64 f_r = mk({1, c, h, w}, 0.8);

    auto build = [f_b, f_r](Graph64& g, const std::vector<Graph64::Ref>& p) {
        DenseAttnRefs<double> refs;
        refs.q = {p[0], p[1], {{p[2], p[3]}}};
        refs.k = {p[4], p[5], {{p[6], p[7]}}};
        refs.v = {p[8], p[9], {{p[10], p[11]}}};
        refs.fc1_w = p[12];
        refs.fc1_b = p[13];
        refs.fc2_w = p[14];
        refs.fc2_b = p[15];
        auto out = dense_attention_g(g, g.leaf(f_b), g.leaf(f_r), refs);
        return g.mean_sq_diff(out, g.leaf(TensorT<double>(g.value(out).shape)));
    };
    auto report = grad_check("dense_attention", build, params, 1e-5, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
}
