#pragma once

// Data-parallel inner loops shared by every stage. Each kernel has a scalar
// reference implementation plus SIMD variants (AVX2+FMA on x86-64, NEON on
// AArch64); the fastest variant the running CPU supports is selected once at
// first use. Setting DIRATLAS_KERNELS=scalar|avx2|neon forces a variant.
//
// Variants agree to rounding, not bit-for-bit: SIMD reductions sum in a
// different order and fuse multiply-adds.

#include <cstddef>
#include <span>
#include <string_view>

#include "diratlas/types.hpp"

namespace diratlas::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct KernelTable {
  Isa isa;
  std::string_view name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = A x, A row-major rows x cols
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y = A^T x, A row-major rows x cols
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table() noexcept;
/// nullptr when not built for AArch64.
const KernelTable* neon_table() noexcept;

/// The table every library routine dispatches through.
const KernelTable& active() noexcept;

double dot(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

double dot(const Vector& x, const Vector& y);
double norm(const Vector& x);

/// A x for row-major A.
Vector gemv(const RowMatrix& a, const Vector& x);
/// A^T x for row-major A, i.e. the x-weighted sum of A's rows.
Vector gemv_t(const RowMatrix& a, const Vector& x);

inline std::span<const double> row(const RowMatrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace diratlas::kernels
