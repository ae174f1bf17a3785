#include "doctest.h"

#include <cmath>

#include "dgad/encoder.hpp"
#include "dgad/rng.hpp"

using namespace dgad;

namespace {

Tensor64 rnd(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    SplitMix64 rng(seed);
    return rand_uniform<double>(std::move(shape), rng, lo, hi);
}

CrossAttnParams<double> rnd_ca(int c, int d_sem, int d, std::uint64_t seed) {
    SplitMix64 rng(seed);
    CrossAttnParams<double> p;
    p.w_q = randn<double>({c, d}, rng);
    p.w_k = randn<double>({d_sem, d}, rng);
    p.w_v = randn<double>({d_sem, d}, rng);
    p.w_out = randn<double>({d, c}, rng);
    return p;
}

}  // namespace

TEST_CASE("assemble_input shape, order and losslessness") {
    const int b = 2, c = 4, h = 16, w = 16;
    auto m = rnd({b, 1, h, w}, 1, 0.0, 1.0);
    auto bg = rnd({b, c, h, w}, 2);
    auto tg = rnd({b, c, h, w}, 3);
    auto out = assemble_input(m, bg, tg);
    REQUIRE(out.shape == std::vector<int>({b, 1 + 2 * c, h, w}));

    // channel slices recover the inputs bit-exactly
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const double* base = out.data.data() + static_cast<std::size_t>(i) * (1 + 2 * c) * hw;
        for (std::size_t p = 0; p < hw; ++p)
            CHECK(base[p] == m.data[static_cast<std::size_t>(i) * hw + p]);
        for (std::size_t p = 0; p < c * hw; ++p) {
            CHECK(base[hw + p] == bg.data[static_cast<std::size_t>(i) * c * hw + p]);
            CHECK(base[hw + c * hw + p] == tg.data[static_cast<std::size_t>(i) * c * hw + p]);
        }
    }

    double in_sum = 0, out_sum = 0;
    for (double v : m.data) in_sum += v;
    for (double v : bg.data) in_sum += v;
    for (double v : tg.data) in_sum += v;
    for (double v : out.data) out_sum += v;
    CHECK(std::fabs(in_sum - out_sum) < 1e-9);
}

TEST_CASE("assemble_input rejects spatial mismatch and bad mask range") {
    auto m = rnd({1, 1, 8, 8}, 4, 0.0, 1.0);
    auto bg = rnd({1, 4, 8, 8}, 5);
    CHECK_THROWS_AS((void)assemble_input(m, bg, rnd({1, 4, 4, 4}, 6)), std::invalid_argument);
    auto bad_mask = rnd({1, 1, 8, 8}, 7, 1.5, 2.0);
    CHECK_THROWS_AS((void)assemble_input(bad_mask, bg, bg), std::invalid_argument);
}

TEST_CASE("expand_input_layer identity and zero-extension invariant") {
    auto kernel = rnd({6, 4, 3, 3}, 11);
    auto bias = rnd({6}, 12);

    auto same = expand_input_layer(kernel, bias, 4, cycling_mapping(4, 4));
    CHECK(same.data == kernel.data);

    const auto mapping = cycling_mapping(4, 9);
    auto expanded = expand_input_layer(kernel, bias, 9, mapping);
    REQUIRE(expanded.shape == std::vector<int>({6, 9, 3, 3}));

    // zero-fill the extra channels: expanded layer == original layer, bit for float
    auto x4 = rnd({2, 4, 5, 5}, 13);
    Tensor64 x9({2, 9, 5, 5});
    for (int i = 0; i < 2; ++i)
        std::copy_n(x4.data.data() + static_cast<std::size_t>(i) * 4 * 25, 4 * 25,
                    x9.data.data() + static_cast<std::size_t>(i) * 9 * 25);
    auto base = conv2d(x4, kernel, bias, 1);
    auto ext = conv2d(x9, expanded, bias, 1);
    REQUIRE(base.shape == ext.shape);
    for (std::size_t i = 0; i < base.numel(); ++i) CHECK(base.data[i] == ext.data[i]);
}

TEST_CASE("expand_input_layer duplicated channel adds its contribution once more") {
    auto kernel = rnd({3, 2, 3, 3}, 21);
    auto bias = rnd({3}, 22);
    std::vector<int> mapping = {0, 1, 0};  // extra channel duplicates channel 0
    auto expanded = expand_input_layer(kernel, bias, 3, mapping);

    auto x = rnd({1, 2, 4, 4}, 23);
    Tensor64 x3({1, 3, 4, 4});
    std::copy_n(x.data.data(), 2 * 16, x3.data.data());
    std::copy_n(x.data.data(), 16, x3.data.data() + 2 * 16);  // duplicate channel 0 input

    // loop-oracle expectation: original output + channel-0-only contribution
    auto full = conv2d(x3, expanded, bias, 1);
    auto orig = conv2d(x, kernel, bias, 1);
    Tensor64 ch0_only({1, 1, 4, 4});
    std::copy_n(x.data.data(), 16, ch0_only.data.data());
    Tensor64 k0({3, 1, 3, 3});
    for (int oc = 0; oc < 3; ++oc)
        std::copy_n(kernel.data.data() + static_cast<std::size_t>(oc) * 2 * 9, 9,
                    k0.data.data() + static_cast<std::size_t>(oc) * 9);
    auto extra = conv2d(ch0_only, k0, Tensor64({3}), 1);
    for (std::size_t i = 0; i < full.numel(); ++i)
        CHECK(full.data[i] == doctest::Approx(orig.data[i] + extra.data[i]).epsilon(1e-12));
}

TEST_CASE("expand_input_layer rejects bad mappings") {
    auto kernel = rnd({2, 3, 1, 1}, 31);
    auto bias = rnd({2}, 32);
    CHECK_THROWS_AS((void)expand_input_layer(kernel, bias, 4, {0, 1, 2, 5}), std::invalid_argument);
    CHECK_THROWS_AS((void)expand_input_layer(kernel, bias, 4, {1, 0, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS((void)expand_input_layer(kernel, bias, 2, {0, 1}), std::invalid_argument);
}

TEST_CASE("semantic_cross_attention residual identity with zero W_out") {
    const int c = 3, d_sem = 4, d = 5;
    auto p = rnd_ca(c, d_sem, d, 41);
    p.w_out = Tensor64({d, c});
    auto f_b = rnd({2, c, 3, 3}, 42);
    SemanticTokens<double> tok{rnd({2, 6, d_sem}, 43)};
    auto out = semantic_cross_attention(f_b, tok, p);
    REQUIRE(out.shape == f_b.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data[i] == f_b.data[i]);
}

TEST_CASE("semantic_cross_attention single token equals projected token everywhere") {
    const int c = 2, d_sem = 3, d = 4;
    auto p = rnd_ca(c, d_sem, d, 51);
    auto f_b = rnd({1, c, 2, 2}, 52);
    SemanticTokens<double> tok{rnd({1, 1, d_sem}, 53)};

    // expected: f_b + W_out^T applied to the single projected token V
    std::vector<double> v(d, 0.0);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d_sem; ++i) v[static_cast<std::size_t>(j)] += tok.tokens.data[i] * p.w_v.data[static_cast<std::size_t>(i) * d + j];
    std::vector<double> proj(c, 0.0);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < d; ++i) proj[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(i)] * p.w_out.data[static_cast<std::size_t>(i) * c + j];

    auto out = semantic_cross_attention(f_b, tok, p);
    for (int pos = 0; pos < 4; ++pos)
        for (int ch = 0; ch < c; ++ch)
            CHECK(out.data[static_cast<std::size_t>(ch) * 4 + pos] ==
                  doctest::Approx(f_b.data[static_cast<std::size_t>(ch) * 4 + pos] + proj[static_cast<std::size_t>(ch)]).epsilon(1e-12));
}

TEST_CASE("semantic_cross_attention integer-weight loop oracle") {
    // 1x2x1x1 feature, one token, integer weights: full hand computation
    Tensor64 f_b({1, 2, 1, 1}, {1.0, 2.0});
    SemanticTokens<double> tok{Tensor64({1, 1, 2}, {1.0, -1.0})};
    CrossAttnParams<double> p;
    p.w_q = Tensor64({2, 2}, {1, 0, 0, 1});
    p.w_k = Tensor64({2, 2}, {1, 1, 0, 1});
    p.w_v = Tensor64({2, 2}, {2, 0, 1, 1});
    p.w_out = Tensor64({2, 2}, {1, 2, 3, 4});
    // V = t Wv = [1*2+(-1)*1, 1*0+(-1)*1] = [1, -1]
    // single token => attention output = V at the position
    // proj = V W_out = [1*1+(-1)*3, 1*2+(-1)*4] = [-2, -2]
    // out = f_b + proj = [-1, 0]
    auto out = semantic_cross_attention(f_b, tok, p);
    CHECK(out.data[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out.data[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("semantic_encode determinism and shape") {
    SplitMix64 rng(61);
    SemanticEncoderParams<double> p;
    const int s0 = 4, s1 = 6, s2 = 8, n_tok = 16, d_sem = 64;
    p.conv_w[0] = randn<double>({s0, 3, 3, 3}, rng);
    p.conv_b[0] = Tensor64({s0});
    p.conv_w[1] = randn<double>({s1, s0, 3, 3}, rng);
    p.conv_b[1] = Tensor64({s1});
    p.conv_w[2] = randn<double>({s2, s1, 3, 3}, rng);
    p.conv_b[2] = Tensor64({s2});
    p.key_w = randn<double>({s2, d_sem}, rng);
    p.key_b = Tensor64({d_sem});
    p.val_w = randn<double>({s2, d_sem}, rng);
    p.val_b = Tensor64({d_sem});
    p.queries = randn<double>({n_tok, d_sem}, rng);

    auto img1 = rnd({1, 3, 16, 16}, 62);
    Tensor64 batch({2, 3, 16, 16});
    std::copy_n(img1.data.data(), img1.numel(), batch.data.data());
    std::copy_n(img1.data.data(), img1.numel(), batch.data.data() + img1.numel());

    auto tokens = semantic_encode(batch, p);
    REQUIRE(tokens.tokens.shape == std::vector<int>({2, n_tok, d_sem}));
    // identical inputs in a batch produce identical token rows
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_tok) * d_sem; ++i)
        CHECK(tokens.tokens.data[i] == tokens.tokens.data[i + static_cast<std::size_t>(n_tok) * d_sem]);

    auto again = semantic_encode(batch, p);
    CHECK(tokens.tokens.data == again.tokens.data);
}

TEST_CASE("attention_map single token is all ones") {
    const int c = 3, d_sem = 4, d = 4;
    auto p = rnd_ca(c, d_sem, d, 71);
    auto f_b = rnd({1, c, 2, 2}, 72);
    SemanticTokens<double> tok{rnd({1, 1, d_sem}, 73)};
    auto map = attention_map(f_b, tok, p);
    REQUIRE(map.shape == std::vector<int>({1, 2, 2}));
    for (double v : map.data) CHECK(v == 1.0);
}

TEST_CASE("attention_map normalization bounds and shift invariance") {
    const int c = 3, d_sem = 4, d = 4;
    auto p = rnd_ca(c, d_sem, d, 81);
    auto f_b = rnd({2, c, 4, 4}, 82);
    SemanticTokens<double> tok{rnd({2, 5, d_sem}, 83)};
    auto map = attention_map(f_b, tok, p);
    for (int i = 0; i < 2; ++i) {
        double mn = 1e9, mx = -1e9;
        for (int pix = 0; pix < 16; ++pix) {
            const double v = map.data[static_cast<std::size_t>(i) * 16 + pix];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        CHECK(mn == doctest::Approx(0.0));
        CHECK(mx == doctest::Approx(1.0));
    }

}

TEST_CASE("attention_map 2x2 constructed logits match hand computation") {
    // w_q = 1, one channel: Q at position p is just f_b[p]; tokens project to
    // keys [0.5, -0.5], so the softmax row is [sigmoid(q), 1-sigmoid(q)] and
    // the per-position max is sigmoid(|q|).
    Tensor64 fb2({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CrossAttnParams<double> p2;
    p2.w_q = Tensor64({1, 1}, {1.0});
    p2.w_k = Tensor64({1, 1}, {1.0});
    p2.w_v = Tensor64({1, 1}, {1.0});
    p2.w_out = Tensor64({1, 1}, {0.0});
    SemanticTokens<double> t2{Tensor64({1, 2, 1}, {0.5, -0.5})};
    auto map = attention_map(fb2, t2, p2);

    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double raw[4];
    for (int pix = 0; pix < 4; ++pix) raw[pix] = sig(std::fabs(fb2.data[static_cast<std::size_t>(pix)]));
    const double mn = raw[0], mx = raw[3];  // monotone in |q|
    for (int pix = 0; pix < 4; ++pix)
        CHECK(map.data[static_cast<std::size_t>(pix)] ==
              doctest::Approx((raw[pix] - mn) / (mx - mn)).epsilon(1e-12));
}

TEST_CASE("attention_map invariant to constant logit shift") {
    // shifting every key by the same vector delta changes all logits of a row
    // by the same amount when the query is shared; directly verify softmax
    // shift invariance at the map level by shifting Q's bias-like direction
    Tensor64 fb({1, 1, 1, 3}, {0.2, -1.0, 2.5});
    CrossAttnParams<double> p;
    p.w_q = Tensor64({1, 1}, {1.0});
    p.w_k = Tensor64({1, 1}, {1.0});
    p.w_v = Tensor64({1, 1}, {1.0});
    p.w_out = Tensor64({1, 1}, {0.0});
    SemanticTokens<double> toks{Tensor64({1, 3, 1}, {0.3, 1.1, -0.4})};
    SemanticTokens<double> shifted{Tensor64({1, 3, 1}, {0.3 + 2.0, 1.1 + 2.0, -0.4 + 2.0})};
    // per-row logits differ by q*2; within a row the shift is constant, so the
    // softmax and hence the map are unchanged only when q is shared per row --
    // which holds here because each row has a single query scalar
    auto m1 = attention_map(fb, toks, p);
    auto m2 = attention_map(fb, shifted, p);
    for (std::size_t i = 0; i < m1.numel(); ++i) CHECK(m1.data[i] == doctest::Approx(m2.data[i]).epsilon(1e-9));
}
