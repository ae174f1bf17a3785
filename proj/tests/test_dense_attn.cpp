#include "doctest.h"

#include <cmath>

#include "dgad/dense_attn.hpp"
#include "dgad/rng.hpp"

using namespace dgad;

namespace {

DenseAttnParams<double> make_params(int c, int l, std::uint64_t seed, double wscale = 0.5) {
    SplitMix64 rng(seed);
    DenseAttnParams<double> p;
    auto mk = [&](std::vector<int> s, double sc) {
        auto t = randn<double>(std::move(s), rng);
        for (auto& v : t.data) v *= sc;
        return t;
    };
    for (ProjStack<double>* s : {&p.q, &p.k, &p.v}) {
        s->conv1x1 = {mk({c, c, 1, 1}, wscale), mk({c}, 0.1)};
        for (int i = 0; i < l; ++i) s->conv3x3.push_back({mk({c, c, 3, 3}, wscale * 0.4), mk({c}, 0.1)});
    }
    const int hidden = std::max(4, c / 2);
    p.fc1_w = mk({c, hidden}, wscale);
    p.fc1_b = mk({hidden}, 0.1);
    p.fc2_w = mk({hidden, 1}, wscale);
    p.fc2_b = Tensor64({1}, {0.0});
    return p;
}

ProjStack<double> identity_stack(int c, int l) {
    ProjStack<double> s;
    s.conv1x1 = {Tensor64({c, c, 1, 1}), Tensor64({c})};
    for (int ch = 0; ch < c; ++ch) s.conv1x1.w.data[static_cast<std::size_t>(ch) * c + ch] = 1.0;
    for (int i = 0; i < l; ++i) {
        ConvLayer<double> layer{Tensor64({c, c, 3, 3}), Tensor64({c})};
        for (int ch = 0; ch < c; ++ch)
            layer.w.data[((static_cast<std::size_t>(ch) * c + ch) * 3 + 1) * 3 + 1] = 1.0;  // center tap
        s.conv3x3.push_back(layer);
    }
    return s;
}

Tensor64 rnd(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    SplitMix64 rng(seed);
    return rand_uniform<double>(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("project identity and zero stacks") {
    auto x = rnd({2, 3, 4, 4}, 1);
    auto id = identity_stack(3, 2);
    auto out = project(x, id);
    REQUIRE(out.shape == x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out.data[i] == doctest::Approx(x.data[i]).epsilon(1e-15));

    ProjStack<double> zero;
    zero.conv1x1 = {Tensor64({3, 3, 1, 1}), Tensor64({3})};
    auto z = project(x, zero);
    for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("project L=1 single channel matches conv loop oracle") {
    auto x = rnd({1, 1, 2, 2}, 5);
    ProjStack<double> s;
    s.conv1x1 = {rnd({1, 1, 1, 1}, 6), rnd({1}, 7)};
    s.conv3x3.push_back({rnd({1, 1, 3, 3}, 8), rnd({1}, 9)});
    auto out = project(x, s);

    // hand loop: y = conv1x1 then 3x3 with zero padding
    double mid[4];
    for (int i = 0; i < 4; ++i) mid[i] = x.data[static_cast<std::size_t>(i)] * s.conv1x1.w.data[0] + s.conv1x1.b.data[0];
    const auto& k = s.conv3x3[0].w.data;
    const double kb = s.conv3x3[0].b.data[0];
    auto at = [&](int y, int xx) { return (y < 0 || y > 1 || xx < 0 || xx > 1) ? 0.0 : mid[y * 2 + xx]; };
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
            double acc = kb;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) acc += k[static_cast<std::size_t>(ky) * 3 + kx] * at(oy - 1 + ky, ox - 1 + kx);
            CHECK(std::fabs(out.data[static_cast<std::size_t>(oy) * 2 + ox] - acc) < 1e-12);
        }
}

TEST_CASE("gate zero weights give alpha 0.5 and clamped beta 0.5") {
    const int c = 4;
    DenseAttnParams<double> p = make_params(c, 0, 11);
    p.fc1_w = Tensor64({c, 4});
    p.fc1_b = Tensor64({4});
    p.fc2_w = Tensor64({4, 1});
    p.fc2_b = Tensor64({1});
    auto q = rnd({2, c, 3, 3}, 12);
    auto maps = gate(q, p);
    for (double v : maps.alpha.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    for (double v : maps.beta.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gate saturation: large fc2 bias pushes alpha to 1 and beta to clamp_lo") {
    const int c = 4;
    DenseAttnParams<double> p = make_params(c, 0, 21);
    p.fc2_b = Tensor64({1}, {100.0});
    auto q = rnd({1, c, 2, 2}, 22);
    auto maps = gate(q, p);
    for (double v : maps.alpha.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : maps.beta.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gate random params match scalar chain oracle on 1x4x1x1") {
    const int c = 4;
    DenseAttnParams<double> p = make_params(c, 0, 31);
    auto q = rnd({1, c, 1, 1}, 32);
    auto maps = gate(q, p);

    const int hidden = p.fc1_w.dim(1);
    std::vector<double> h(static_cast<std::size_t>(hidden));
    for (int j = 0; j < hidden; ++j) {
        double acc = p.fc1_b.data[static_cast<std::size_t>(j)];
        for (int i = 0; i < c; ++i) acc += q.data[static_cast<std::size_t>(i)] * p.fc1_w.data[static_cast<std::size_t>(i) * hidden + j];
        h[static_cast<std::size_t>(j)] = std::max(0.0, acc);
    }
    double z = p.fc2_b.data[0];
    for (int j = 0; j < hidden; ++j) z += h[static_cast<std::size_t>(j)] * p.fc2_w.data[static_cast<std::size_t>(j)];
    const double alpha = 1.0 / (1.0 + std::exp(-z));
    const double beta = std::min(std::max(1.0 - alpha, 0.5), 0.8);
    CHECK(std::fabs(maps.alpha.data[0] - alpha) < 1e-12);
    CHECK(std::fabs(maps.beta.data[0] - beta) < 1e-12);
}

TEST_CASE("gate bounds over random inputs and params (property)") {
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const int c = 4 + 2 * static_cast<int>(trial % 3);
        auto p = make_params(c, 0, 1000 + trial, 0.8);
        SplitMix64 rng(2000 + trial);
        auto q = randn<double>({2, c, 3, 3}, rng);
        auto maps = gate(q, p);
        for (double v : maps.alpha.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        for (double v : maps.beta.data) {
            CHECK(v >= 0.5);
            CHECK(v <= 0.8);
        }
    }
}

TEST_CASE("mask_process clamp semantics") {
    Tensor64 m({5}, {0.0, 1.0, 0.6, -1.0, 2.0});
    auto out = mask_process(m, 0.5, 0.8);
    CHECK(out.data[0] == 0.5);
    CHECK(out.data[1] == 0.8);
    CHECK(out.data[2] == 0.6);
    CHECK(out.data[3] == 0.5);
    CHECK(out.data[4] == 0.8);

    Tensor64 v({3}, {-1.0, 0.55, 2.0});
    auto o2 = mask_process(v, 0.5, 0.8);
    CHECK(o2.data[0] == 0.5);
    CHECK(o2.data[1] == 0.55);
    CHECK(o2.data[2] == 0.8);

    CHECK_THROWS_AS((void)mask_process(m, 0.8, 0.5), std::invalid_argument);
}

TEST_CASE("dense_attention degenerate gates reduce to attention and Q") {
    const int c = 4;
    auto p = make_params(c, 1, 41);
    auto f_b = rnd({2, c, 3, 3}, 42);
    auto f_r = rnd({2, c, 3, 3}, 43);

    DenseAttnHooks all_attn;
    all_attn.alpha_const = 1.0;
    all_attn.disable_clamp = true;
    auto out_attn = dense_attention(f_b, f_r, p, &all_attn);
    // oracle: plain scaled-dot attention over the projected features
    auto q = project(f_b, p.q);
    auto k = project(f_r, p.k);
    auto v = project(f_r, p.v);
    auto to_bnc = [](const Tensor64& t) {
        const int b = t.dim(0), ch = t.dim(1), hw = t.dim(2) * t.dim(3);
        Tensor64 o({b, hw, ch});
        for (int i = 0; i < b; ++i)
            for (int cc = 0; cc < ch; ++cc)
                for (int pp = 0; pp < hw; ++pp)
                    o.data[(static_cast<std::size_t>(i) * hw + pp) * ch + cc] =
                        t.data[(static_cast<std::size_t>(i) * ch + cc) * hw + pp];
        return o;
    };
    auto ref_bnc = scaled_dot_attention(to_bnc(q), to_bnc(k), to_bnc(v));
    auto out_bnc = to_bnc(out_attn);
    for (std::size_t i = 0; i < out_bnc.numel(); ++i)
        CHECK(std::fabs(out_bnc.data[i] - ref_bnc.data[i]) < 1e-12);

    DenseAttnHooks all_q;
    all_q.alpha_const = 0.0;
    all_q.disable_clamp = true;
    auto out_q = dense_attention(f_b, f_r, p, &all_q);
    for (std::size_t i = 0; i < out_q.numel(); ++i) CHECK(out_q.data[i] == q.data[i]);
}

TEST_CASE("dense_attention single position equals V*alpha + Q*beta") {
    const int c = 2;
    auto p = make_params(c, 0, 51);
    auto f_b = rnd({1, c, 1, 1}, 52);
    auto f_r = rnd({1, c, 1, 1}, 53);
    auto out = dense_attention(f_b, f_r, p);

    auto q = project(f_b, p.q);
    auto v = project(f_r, p.v);
    auto maps = gate(q, p);
    const double alpha = maps.alpha.data[0], beta = maps.beta.data[0];
    for (int ch = 0; ch < c; ++ch)
        CHECK(std::fabs(out.data[static_cast<std::size_t>(ch)] -
                        (v.data[static_cast<std::size_t>(ch)] * alpha + q.data[static_cast<std::size_t>(ch)] * beta)) < 1e-12);
}

TEST_CASE("dense_attention attention rows sum to one (property)") {
    const int c = 4;
    auto p = make_params(c, 1, 61);
    auto f_b = rnd({1, c, 3, 3}, 62);
    auto f_r = rnd({1, c, 3, 3}, 63);
    // alpha==1/beta==0 makes the output the attention itself; rows of the
    // softmax sum to 1 iff a constant-V probe returns that constant
    ProjStack<double> const_v;
    const_v.conv1x1 = {Tensor64({c, c, 1, 1}), Tensor64({c})};
    for (int ch = 0; ch < c; ++ch) const_v.conv1x1.b.data[static_cast<std::size_t>(ch)] = 1.0;
    auto probe = p;
    probe.v = const_v;
    DenseAttnHooks hooks;
    hooks.alpha_const = 1.0;
    hooks.disable_clamp = true;
    auto out = dense_attention(f_b, f_r, probe, &hooks);
    for (double val : out.data) CHECK(std::fabs(val - 1.0) < 1e-6);
}

TEST_CASE("dense_attention convex blend in constant alpha") {
    const int c = 4;
    auto p = make_params(c, 0, 71);
    auto f_b = rnd({1, c, 2, 2}, 72);
    auto f_r = rnd({1, c, 2, 2}, 73);
    DenseAttnHooks h0, h1, hmid;
    h0.alpha_const = 0.0;
    h0.disable_clamp = true;
    h1.alpha_const = 1.0;
    h1.disable_clamp = true;
    hmid.alpha_const = 0.3;
    hmid.disable_clamp = true;
    auto lo = dense_attention(f_b, f_r, p, &h0);
    auto hi = dense_attention(f_b, f_r, p, &h1);
    auto mid = dense_attention(f_b, f_r, p, &hmid);
    for (std::size_t i = 0; i < mid.numel(); ++i)
        CHECK(std::fabs(mid.data[i] - (0.3 * hi.data[i] + 0.7 * lo.data[i])) < 1e-12);
}

TEST_CASE("dense_attention 1x1-only stacks are jointly permutation equivariant") {
    const int c = 3;
    auto p = make_params(c, 0, 81);
    auto f_b = rnd({1, c, 2, 2}, 82);
    auto f_r = rnd({1, c, 2, 2}, 83);
    auto base = dense_attention(f_b, f_r, p);

    const int perm[4] = {2, 0, 3, 1};
    auto permute = [&](const Tensor64& t) {
        Tensor64 o = t;
        for (int ch = 0; ch < c; ++ch)
            for (int pp = 0; pp < 4; ++pp)
                o.data[static_cast<std::size_t>(ch) * 4 + pp] = t.data[static_cast<std::size_t>(ch) * 4 + perm[pp]];
        return o;
    };
    auto out_p = dense_attention(permute(f_b), permute(f_r), p);
    auto base_p = permute(base);
    for (std::size_t i = 0; i < base_p.numel(); ++i) CHECK(std::fabs(base_p.data[i] - out_p.data[i]) < 1e-12);
}

TEST_CASE("dense_attention validates shapes and config") {
    const int c = 3;
    auto p = make_params(c, 0, 91);
    CHECK_THROWS_AS((void)dense_attention(rnd({1, c, 2, 2}, 92), rnd({1, c, 3, 3}, 93), p),
                    std::invalid_argument);
    auto bad = p;
    bad.clamp_lo = 0.9;
    CHECK_THROWS_AS((void)dense_attention(rnd({1, c, 2, 2}, 94), rnd({1, c, 2, 2}, 95), bad),
                    std::invalid_argument);
}
