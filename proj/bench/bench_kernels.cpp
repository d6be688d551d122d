// Serial reference vs OpenMP GEMM across the sizes the toy encoders hit
// (17×32 token blocks) up to sizes where threading pays off.
#include <benchmark/benchmark.h>

#include <vector>

#include "dcpl/kernels.hpp"
#include "dcpl/rng.hpp"

namespace {

struct Operands {
    std::vector<double> a, b, c;
    explicit Operands(std::size_t n) : a(n * n), b(n * n), c(n * n) {
        dcpl::Rng rng(n);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
    }
};

void BM_GemmSerial(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Operands op(n);
    for (auto _ : state) {
        dcpl::kernels::serial::gemm(op.a, op.b, op.c, n, n, n, false);
        benchmark::DoNotOptimize(op.c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}

void BM_GemmOmp(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Operands op(n);
    for (auto _ : state) {
        dcpl::kernels::omp::gemm(op.a, op.b, op.c, n, n, n, false);
        benchmark::DoNotOptimize(op.c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}

void BM_GemmNtSerial(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Operands op(n);
    for (auto _ : state) {
        dcpl::kernels::serial::gemm_nt(op.a, op.b, op.c, n, n, n, false);
        benchmark::DoNotOptimize(op.c.data());
    }
}

void BM_GemmNtOmp(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Operands op(n);
    for (auto _ : state) {
        dcpl::kernels::omp::gemm_nt(op.a, op.b, op.c, n, n, n, false);
        benchmark::DoNotOptimize(op.c.data());
    }
}

}  // namespace

BENCHMARK(BM_GemmSerial)->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_GemmOmp)->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_GemmNtSerial)->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_GemmNtOmp)->RangeMultiplier(2)->Range(16, 256);

BENCHMARK_MAIN();
