#include <benchmark/benchmark.h>

#include "ddt/ops.hpp"
#include "ddt/sharesched.hpp"
#include "ddt/train.hpp"

using namespace ddt;

namespace {

Tensor gaussian(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& e : v) e = rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
}

SimilarityMatrix random_similarity(std::size_t n) {
    Rng rng(1);
    SimilarityMatrix s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) s(i, j) = s(j, i) = rng.uniform(-1.0, 1.0);
    }
    return s;
}

void BM_PlanDP(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const SimilarityMatrix s = random_similarity(n);
    for (auto _ : state) benchmark::DoNotOptimize(plan_dp(s, n / 4));
}
BENCHMARK(BM_PlanDP)->Arg(50)->Arg(250);

void BM_PlanBruteforce(benchmark::State& state) {
    const SimilarityMatrix s = random_similarity(16);
    for (auto _ : state) benchmark::DoNotOptimize(plan_bruteforce(s, 5));
}
BENCHMARK(BM_PlanBruteforce);

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    Tensor a = gaussian(rng, {n, n}), b = gaussian(rng, {n, n});
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_DeskForward(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    DDTModel m(model_preset("desk"), 3);
    Rng rng(4);
    m.perturb(rng, 0.05);
    Tensor x = gaussian(rng, {batch, 1, 8, 8});
    std::vector<double> t(batch, 0.5);
    std::vector<int> y(batch, 0);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, t, y));
}
BENCHMARK(BM_DeskForward)->Arg(1)->Arg(32);

void BM_DeskTrainStep(benchmark::State& state) {
    TrainConfig cfg;
    cfg.steps = 1000000;
    Trainer trainer(cfg);
    for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
