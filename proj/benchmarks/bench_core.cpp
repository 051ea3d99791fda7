#include <benchmark/benchmark.h>

#include <random>

#include "uvid/graph.hpp"
#include "uvid/keyframes.hpp"
#include "uvid/layers.hpp"
#include "uvid/train.hpp"

using namespace uvid;

namespace {

Tensor random_tensor(Shape s, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Tensor t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
    return t;
}

}  // namespace

static void BM_Conv3x3Forward(benchmark::State& state) {
    const auto ch = state.range(0);
    Conv2D conv(ch, ch, 3, 3, 1, 1, Padding::kSame);
    std::mt19937 rng(1);
    conv.init_params(rng);
    const Tensor x = random_tensor({1, ch, 64, 64}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(x, false));
    }
    state.SetItemsProcessed(state.iterations() * conv.flop_count(x.shape()));
}
BENCHMARK(BM_Conv3x3Forward)->Arg(8)->Arg(32);

static void BM_Conv3x3Backward(benchmark::State& state) {
    const auto ch = state.range(0);
    Conv2D conv(ch, ch, 3, 3, 1, 1, Padding::kSame);
    std::mt19937 rng(1);
    conv.init_params(rng);
    const Tensor x = random_tensor({1, ch, 64, 64}, 2);
    const Tensor g = random_tensor({1, ch, 64, 64}, 3);
    (void)conv.forward(x, false);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.backward(g));
    }
}
BENCHMARK(BM_Conv3x3Backward)->Arg(8)->Arg(32);

static void BM_ElementwiseMul(benchmark::State& state) {
    const Tensor a = random_tensor({1, 64, 64, 64}, 4);
    const Tensor b = random_tensor({1, 64, 64, 64}, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(elementwise_mul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * a.numel());
}
BENCHMARK(BM_ElementwiseMul);

static void BM_MaxPool(benchmark::State& state) {
    MaxPool2D pool(2, 2, 2, 2);
    const Tensor x = random_tensor({1, 64, 64, 64}, 6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pool.forward(x, false));
    }
}
BENCHMARK(BM_MaxPool);

static void BM_SoftmaxCrossEntropy(benchmark::State& state) {
    SoftmaxChannels sm;
    const Tensor logits = random_tensor({2, 4, 64, 64}, 7);
    LabelBatch targets{2, 64, 64, {}};
    std::mt19937 rng(8);
    for (int i = 0; i < 2 * 64 * 64; ++i) {
        targets.idx.push_back(static_cast<std::int32_t>(rng() % 4));
    }
    for (auto _ : state) {
        const Tensor probs = sm.forward(logits, false);
        benchmark::DoNotOptimize(cross_entropy_loss(probs, targets));
    }
}
BENCHMARK(BM_SoftmaxCrossEntropy);

static void BM_HistogramDistance(benchmark::State& state) {
    std::mt19937 rng(9);
    std::vector<std::uint8_t> a(1280 * 720 * 3), b(a.size());
    for (auto& v : a) v = static_cast<std::uint8_t>(rng() % 256);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng() % 256);
    const FrameHistogram ha = rgb_histogram(a.data(), 1280 * 720);
    const FrameHistogram hb = rgb_histogram(b.data(), 1280 * 720);
    for (auto _ : state) {
        benchmark::DoNotOptimize(rgb_histogram(a.data(), 1280 * 720));
        benchmark::DoNotOptimize(histogram_distance(ha, hb));
    }
}
BENCHMARK(BM_HistogramDistance);

static void BM_ToyModelForward(benchmark::State& state) {
    ArchConfig cfg;
    cfg.base_width = 8;
    cfg.input_h = 64;
    cfg.input_w = 64;
    ModelGraph g = build_uvidnet(cfg);
    g.init_params(10);
    const Tensor a = random_tensor({1, 3, 64, 64}, 11);
    const Tensor b = random_tensor({1, 3, 64, 64}, 12);
    for (auto _ : state) {
        benchmark::DoNotOptimize(g.forward(a, b, false));
    }
    state.SetItemsProcessed(state.iterations() * g.count_flops());
}
BENCHMARK(BM_ToyModelForward);

BENCHMARK_MAIN();
