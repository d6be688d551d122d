#include <doctest.h>

#include <tuple>
#include <vector>

#include "dcpl/kernels.hpp"
#include "dcpl/rng.hpp"

using namespace dcpl;

namespace {
std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}
}  // namespace

TEST_CASE("parallel gemm kernels match the serial reference bitwise") {
    Rng rng(1);
    kernels::set_max_threads(4);
    for (auto [m, k, n] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{{1, 1, 1}, {3, 5, 2}, {17, 32, 16}, {64, 48, 96}}) {
        auto a = random_vec(rng, m * k), b = random_vec(rng, k * n), bt = random_vec(rng, n * k), at = random_vec(rng, k * m);
        for (bool acc : {false, true}) {
            auto seed = random_vec(rng, m * n);
            auto c1 = seed, c2 = seed;
            kernels::serial::gemm(a, b, c1, m, k, n, acc);
            kernels::omp::gemm(a, b, c2, m, k, n, acc);
            CHECK(c1 == c2);
            c1 = seed, c2 = seed;
            kernels::serial::gemm_nt(a, bt, c1, m, k, n, acc);
            kernels::omp::gemm_nt(a, bt, c2, m, k, n, acc);
            CHECK(c1 == c2);
            c1 = seed, c2 = seed;
            kernels::serial::gemm_tn(at, b, c1, m, k, n, acc);
            kernels::omp::gemm_tn(at, b, c2, m, k, n, acc);
            CHECK(c1 == c2);
        }
    }
    kernels::set_max_threads(0);
}

TEST_CASE("gemm variants agree with a naive triple loop") {
    const std::size_t m = 3, k = 4, n = 2;
    Rng rng(2);
    auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
    std::vector<double> want(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t q = 0; q < k; ++q) want[i * n + j] += a[i * k + q] * b[q * n + j];

    std::vector<double> c(m * n);
    kernels::gemm(a, b, c, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]));

    std::vector<double> bt(n * k), at(k * m);
    for (std::size_t q = 0; q < k; ++q)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + q] = b[q * n + j];
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t q = 0; q < k; ++q) at[q * m + i] = a[i * k + q];
    kernels::gemm_nt(a, bt, c, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]));
    kernels::gemm_tn(at, b, c, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]));
}
