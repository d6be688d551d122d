#pragma once

#include <cstddef>
#include <span>

// Dense row-major GEMM kernels. The serial versions are the reference the
// OpenMP versions are tested against; `gemm*` dispatches between them.
namespace dcpl::kernels {

// c[m×n] (+)= a[m×k] · b[k×n]
// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
namespace serial {
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
}  // namespace serial

namespace omp {
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
}  // namespace omp

// Work (m·k·n) above which the dispatching kernels go parallel. Tiny
// problems stay serial, as does anything called from inside a parallel region.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// Number of threads parallel regions in this library may use.
int max_threads();
void set_max_threads(int n);

}  // namespace dcpl::kernels
