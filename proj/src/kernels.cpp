#include "dcpl/kernels.hpp"

#include <omp.h>

namespace dcpl::kernels {

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c.data() + i * n;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            const double av = a[i * k + q];
            const double* brow = b.data() + q * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t q = 0; q < k; ++q) s += arow[q] * brow[q];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (std::size_t q = 0; q < k; ++q) {
        const double* arow = a.data() + q * m;
        const double* brow = b.data() + q * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace serial

namespace omp {

// Rows of c are independent; each thread accumulates in the same order as
// the serial kernel, so results match it bitwise.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data() + i * n;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            const double av = a[i * k + q];
            const double* brow = b.data() + q * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t q = 0; q < k; ++q) s += arow[q] * brow[q];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

// Parallel over output rows; the q-loop order per element matches serial::gemm_tn.
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data() + i * n;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            const double av = a[q * m + i];
            const double* brow = b.data() + q * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace omp

namespace {
int g_max_threads = 0;

bool go_parallel(std::size_t m, std::size_t k, std::size_t n) {
    return m * k * n >= kParallelThreshold && !omp_in_parallel() && max_threads() > 1;
}
}  // namespace

int max_threads() { return g_max_threads > 0 ? g_max_threads : omp_get_max_threads(); }
void set_max_threads(int n) { g_max_threads = n; }

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (go_parallel(m, k, n))
        omp::gemm(a, b, c, m, k, n, accumulate);
    else
        serial::gemm(a, b, c, m, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (go_parallel(m, k, n))
        omp::gemm_nt(a, b, c, m, k, n, accumulate);
    else
        serial::gemm_nt(a, b, c, m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (go_parallel(m, k, n))
        omp::gemm_tn(a, b, c, m, k, n, accumulate);
    else
        serial::gemm_tn(a, b, c, m, k, n, accumulate);
}

}  // namespace dcpl::kernels
