#include "doctest.h"

#include <cmath>

#include "dgad/model.hpp"
#include "dgad/rng.hpp"

using namespace dgad;

namespace {

ModelConfig tiny_cfg(Arm arm = Arm::Full) {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.channels = {8, 16};
    cfg.res_units = 1;
    cfg.time_dim = 16;
    cfg.n_tok = 4;
    cfg.d_sem = 8;
    cfg.d_attn = 8;
    cfg.sem_channels = {4, 6, 8};
    cfg.dense_l = 1;
    cfg.arm = arm;
    return cfg;
}

template <typename T>
ConditioningBundle<T> random_bundle(const DgadModelT<T>& model, int b, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const int s = model.config().latent_size();
    ConditioningBundle<T> cond;
    cond.m_lat = rand_uniform<T>({b, 1, s, s}, rng, 0.0, 1.0);
    cond.f_bg = randn<T>({b, model.config().latent_channels, s, s}, rng);
    cond.f_obj.tokens = randn<T>({b, model.config().n_tok, model.config().d_sem}, rng);
    const auto chs = model.decoder_feature_channels();
    const auto szs = model.decoder_feature_sizes();
    for (std::size_t i = 0; i < chs.size(); ++i)
        cond.f_r.push_back(randn<T>({b, chs[i], szs[i], szs[i]}, rng));
    return cond;
}

}  // namespace

TEST_CASE("latent codec basis is orthonormal and composition idempotent") {
    LatentCodec codec;
    const auto& w = codec.basis();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double dot = 0;
            for (int k = 0; k < 48; ++k)
                dot += w.data[static_cast<std::size_t>(i) * 48 + k] * w.data[static_cast<std::size_t>(j) * 48 + k];
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        }

    SplitMix64 rng(5);
    auto img = rand_uniform<double>({2, 3, 16, 16}, rng, -1.0, 1.0);
    auto once = codec.decode(codec.encode(img));
    auto twice = codec.decode(codec.encode(once));
    for (std::size_t i = 0; i < once.numel(); ++i) CHECK(std::fabs(once.data[i] - twice.data[i]) < 1e-10);
}

TEST_CASE("latent shapes and zero image maps to zero latent") {
    LatentCodec codec;
    Tensor64 img({1, 3, 64, 64});
    auto z = codec.encode(img);
    REQUIRE(z.shape == std::vector<int>({1, 4, 16, 16}));
    for (double v : z.data) CHECK(v == 0.0);
    CHECK_THROWS_AS((void)codec.encode(Tensor64({1, 3, 30, 30})), std::invalid_argument);
}

TEST_CASE("latent reconstruction error equals null-space energy") {
    LatentCodec codec;
    SplitMix64 rng(9);
    auto img = rand_uniform<double>({1, 3, 8, 8}, rng, -1.0, 1.0);
    auto recon = codec.decode(codec.encode(img));

    double err = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        const double d = img.data[i] - recon.data[i];
        err += d * d;
    }

    // independent linear-algebra oracle: project each 48-block onto the basis
    // and measure the residual directly
    const auto& w = codec.basis();
    double null_energy = 0;
    for (int by = 0; by < 2; ++by)
        for (int bx = 0; bx < 2; ++bx) {
            double block[48];
            for (int c = 0; c < 3; ++c)
                for (int yy = 0; yy < 4; ++yy)
                    for (int xx = 0; xx < 4; ++xx)
                        block[c * 16 + yy * 4 + xx] =
                            img.data[(static_cast<std::size_t>(c) * 8 + 4 * by + yy) * 8 + 4 * bx + xx];
            double coef[4];
            for (int r = 0; r < 4; ++r) {
                coef[r] = 0;
                for (int k = 0; k < 48; ++k) coef[r] += w.data[static_cast<std::size_t>(r) * 48 + k] * block[k];
            }
            for (int k = 0; k < 48; ++k) {
                double proj = 0;
                for (int r = 0; r < 4; ++r) proj += coef[r] * w.data[static_cast<std::size_t>(r) * 48 + k];
                const double d = block[k] - proj;
                null_energy += d * d;
            }
        }
    CHECK(err == doctest::Approx(null_energy).epsilon(1e-9));
}

TEST_CASE("dense attention lives in decoder blocks only") {
    DgadModel64 model(tiny_cfg(), 1);
    CHECK(model.dense_blocks_in_decoder() == 2);  // one per level
    CHECK(model.dense_blocks_in_encoder() == 0);

    DgadModel64 both(tiny_cfg(Arm::DenseCaBothStages), 1);
    CHECK(both.dense_blocks_in_decoder() == 2);
    CHECK(both.dense_blocks_in_encoder() == 1);  // one encoder block at this depth
}

TEST_CASE("default config decoder feature shapes") {
    ModelConfig cfg;  // 64x64 image, channels 64/128/256
    DgadModel32 model(cfg, 3);
    CHECK(model.decoder_feature_channels() == std::vector<int>({256, 128, 64}));
    CHECK(model.decoder_feature_sizes() == std::vector<int>({4, 8, 16}));

    SplitMix64 rng(4);
    auto obj = rand_uniform<float>({2, 3, 64, 64}, rng, -1.0, 1.0);
    auto feats = model.reference_forward(obj);
    REQUIRE(feats.size() == 3);
    CHECK(feats[0].shape == std::vector<int>({2, 256, 4, 4}));
    CHECK(feats[1].shape == std::vector<int>({2, 128, 8, 8}));
    CHECK(feats[2].shape == std::vector<int>({2, 64, 16, 16}));

    auto tokens = model.semantic_encode(obj);
    CHECK(tokens.tokens.shape == std::vector<int>({2, 16, 64}));
}

TEST_CASE("reference features deterministic and batch-consistent") {
    DgadModel64 model(tiny_cfg(), 11);
    SplitMix64 rng(12);
    auto one = rand_uniform<double>({1, 3, 8, 8}, rng, -1.0, 1.0);
    Tensor64 batch({2, 3, 8, 8});
    std::copy_n(one.data.data(), one.numel(), batch.data.data());
    std::copy_n(one.data.data(), one.numel(), batch.data.data() + one.numel());
    auto feats = model.reference_forward(batch);
    for (const auto& f : feats) {
        const std::size_t half = f.numel() / 2;
        for (std::size_t i = 0; i < half; ++i) CHECK(f.data[i] == f.data[half + i]);
    }
}

TEST_CASE("predict_noise shape, determinism and validation") {
    DgadModel64 model(tiny_cfg(), 21);
    auto cond = random_bundle(model, 2, 22);
    SplitMix64 rng(23);
    auto x = randn<double>({2, 4, 2, 2}, rng);

    auto e1 = model.predict_noise(x, 3, cond);
    auto e2 = model.predict_noise(x, 3, cond);
    REQUIRE(e1.shape == x.shape);
    CHECK(e1.data == e2.data);  // bit-for-float purity

    auto bad = cond;
    bad.f_r[0] = Tensor64({2, 4, 1, 1});
    CHECK_THROWS_AS((void)model.predict_noise(x, 3, bad), std::invalid_argument);
    auto bad2 = cond;
    bad2.m_lat = Tensor64({2, 1, 4, 4});
    CHECK_THROWS_AS((void)model.predict_noise(x, 3, bad2), std::invalid_argument);
}

TEST_CASE("zeroed attention projections reduce to a pure conv U-Net") {
    DgadModel64 model(tiny_cfg(), 31);
    // zero every semantic W_out and every dense projection + gate output
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& p = model.params()[static_cast<int>(i)];
        const bool dense = p.group == "dense_ca";
        const bool w_out = p.name.find(".w_out") != std::string::npos;
        if (dense || w_out) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    }
    auto cond = random_bundle(model, 1, 32);
    SplitMix64 rng(33);
    auto x = randn<double>({1, 4, 2, 2}, rng);
    auto with_cond = model.predict_noise(x, 1, cond);

    // a different conditioning (tokens, reference features) must not matter
    auto cond2 = cond;
    SplitMix64 rng2(34);
    cond2.f_obj.tokens = randn<double>(cond.f_obj.tokens.shape, rng2);
    for (auto& f : cond2.f_r) f = randn<double>(f.shape, rng2);
    auto with_other = model.predict_noise(x, 1, cond2);
    for (std::size_t i = 0; i < with_cond.numel(); ++i)
        CHECK(with_cond.data[i] == doctest::Approx(with_other.data[i]).epsilon(1e-12));
}

TEST_CASE("expanded input conv ignores zeroed extra channels bit-for-float") {
    DgadModel64 model(tiny_cfg(), 41);
    const auto& store = model.params();
    const auto& kernel = store[store.find("input_conv.w")].value;
    REQUIRE(kernel.dim(1) == 9);

    // original = first 4 input channels (mapping is identity there)
    Tensor64 orig({kernel.dim(0), 4, 3, 3});
    for (int oc = 0; oc < kernel.dim(0); ++oc)
        for (int ic = 0; ic < 4; ++ic)
            std::copy_n(kernel.data.data() + (static_cast<std::size_t>(oc) * 9 + ic) * 9, 9,
                        orig.data.data() + (static_cast<std::size_t>(oc) * 4 + ic) * 9);
    const auto& bias = store[store.find("input_conv.b")].value;

    // zeroed extra channels (4..8): the expanded layer reproduces the
    // original layer on the first four channels exactly
    SplitMix64 rng(42);
    auto x4 = randn<double>({1, 4, 2, 2}, rng);
    Tensor64 x9({1, 9, 2, 2});
    std::copy_n(x4.data.data(), x4.numel(), x9.data.data());

    auto full = conv2d(x9, kernel, bias, 1);
    auto expect = conv2d(x4, orig, bias, 1);
    REQUIRE(full.shape == expect.shape);
    for (std::size_t i = 0; i < full.numel(); ++i) CHECK(full.data[i] == expect.data[i]);
}

TEST_CASE("compose smoke, determinism, and box blending") {
    ModelConfig cfg = tiny_cfg();
    cfg.image_size = 16;
    DgadModel64 model(cfg, 51);
    auto schedule = make_linear_schedule(10, 1e-3, 0.02);
    SplitMix64 rng(52);
    auto obj = rand_uniform<double>({3, 16, 16}, rng, -1.0, 1.0);
    auto bg = rand_uniform<double>({3, 16, 16}, rng, -1.0, 1.0);
    BoxI box{4, 5, 12, 13};

    auto out1 = model.compose(obj, bg, box, schedule, 1, 7.5, 99);
    REQUIRE(out1.shape == std::vector<int>({3, 16, 16}));
    CHECK(out1.all_finite());

    auto out2 = model.compose(obj, bg, box, schedule, 1, 7.5, 99);
    CHECK(out1.data == out2.data);

    // outside the box the background passes through untouched
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) continue;
                CHECK(out1.data[(static_cast<std::size_t>(c) * 16 + y) * 16 + x] ==
                      bg.data[(static_cast<std::size_t>(c) * 16 + y) * 16 + x]);
            }
}

TEST_CASE("forward trace captures per-block attention inputs") {
    DgadModel64 model(tiny_cfg(), 61);
    auto cond = random_bundle(model, 1, 62);
    SplitMix64 rng(63);
    auto x = randn<double>({1, 4, 2, 2}, rng);
    ForwardTrace<double> trace;
    (void)model.predict_noise(x, 0, cond, &trace);
    // enc0, mid, dec1, dec0
    REQUIRE(trace.block_names.size() == 4);
    CHECK(trace.block_names[0] == "unet.enc0");
    CHECK(trace.block_names[1] == "unet.mid");
    CHECK(trace.ca_inputs[0].dim(1) == 8);
    CHECK(trace.ca_inputs[1].dim(1) == 16);
}
