#include <benchmark/benchmark.h>

#include "dgad/ops.hpp"
#include "dgad/rng.hpp"

using namespace dgad;

static void BM_Conv2d3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    SplitMix64 rng(1);
    auto x = randn<float>({1, c, 16, 16}, rng);
    auto k = randn<float>({c, c, 3, 3}, rng);
    auto b = randn<float>({c}, rng);
    for (auto _ : state) {
        auto out = conv2d(x, k, b, 1);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * 16 * 16);
}
BENCHMARK(BM_Conv2d3x3)->Arg(64)->Arg(128)->Arg(256);

static void BM_ScaledDotAttention(benchmark::State& state) {
    const int hw = static_cast<int>(state.range(0));
    SplitMix64 rng(2);
    auto q = randn<float>({1, hw, 64}, rng);
    auto k = randn<float>({1, hw, 64}, rng);
    auto v = randn<float>({1, hw, 64}, rng);
    for (auto _ : state) {
        auto out = scaled_dot_attention(q, k, v);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_ScaledDotAttention)->Arg(64)->Arg(256);

static void BM_BicubicDown(benchmark::State& state) {
    SplitMix64 rng(3);
    auto x = randn<float>({1, 1, 64, 64}, rng);
    for (auto _ : state) {
        auto out = bicubic_downsample(x, 16, 16);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_BicubicDown);

BENCHMARK_MAIN();
