// Microbenchmarks for the dense kernels that dominate training time.
// Run with --benchmark_min_time=0.2s for a quick pass.

#include <benchmark/benchmark.h>

#include "kdlab/kernels.hpp"
#include "kdlab/rng.hpp"
#include "kdlab/tape.hpp"
#include "kdlab/tensor.hpp"

namespace {

using namespace kdlab;

Tensor<float> random_matrix(int rows, int cols, uint64_t seed) {
    Tensor<float> t = Tensor<float>::zeros({rows, cols});
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    return t;
}

void BM_gemm_nn(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor<float> a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    Tensor<float> c = Tensor<float>::zeros({n, n});
    for (auto _ : state) {
        std::fill(c.data.begin(), c.data.end(), 0.0f);
        gemm_nn(a.data.data(), b.data.data(), c.data.data(), n, n, n);
        benchmark::DoNotOptimize(c.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * int64_t(n) * n * n);
}
BENCHMARK(BM_gemm_nn)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

void BM_gemm_nt(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor<float> a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    Tensor<float> c = Tensor<float>::zeros({n, n});
    for (auto _ : state) {
        std::fill(c.data.begin(), c.data.end(), 0.0f);
        gemm_nt(a.data.data(), b.data.data(), c.data.data(), n, n, n);
        benchmark::DoNotOptimize(c.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * int64_t(n) * n * n);
}
BENCHMARK(BM_gemm_nt)->Arg(128)->Arg(256);

void BM_softmax_rows(benchmark::State& state) {
    const int rows = 96, cols = static_cast<int>(state.range(0));
    Tensor<float> logits = random_matrix(rows, cols, 3);
    for (auto _ : state) {
        Tensor<float> p = softmax_rows(logits, 1.0);
        benchmark::DoNotOptimize(p.data.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * cols);
}
BENCHMARK(BM_softmax_rows)->Arg(259)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
