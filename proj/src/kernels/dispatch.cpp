#include <cmath>
#include <cstdlib>
#include <string_view>

#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"
#include "tables.hpp"

namespace diratlas::kernels {
namespace {

bool cpu_has_avx2_fma() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() noexcept {
  const KernelTable* forced = nullptr;
  if (const char* env = std::getenv("DIRATLAS_KERNELS")) {
    const std::string_view want(env);
    if (want == "scalar") forced = &scalar_table();
    if (want == "avx2") forced = avx2_table();
    if (want == "neon") forced = neon_table();
  }
  if (forced) return *forced;
  if (const auto* t = avx2_table()) return *t;
  if (const auto* t = neon_table()) return *t;
  return scalar_table();
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorCode::DimensionMismatch, std::string(what) + ": " + std::to_string(a) +
                                           " vs " + std::to_string(b));
  }
}

}  // namespace

const KernelTable* avx2_table() noexcept {
  if (!cpu_has_avx2_fma()) return nullptr;
  return detail::avx2_table_impl();
}

const KernelTable* neon_table() noexcept { return detail::neon_table_impl(); }

const KernelTable& active() noexcept {
  static const KernelTable& table = select();
  return table;
}

double dot(std::span<const double> x, std::span<const double> y) {
  check_same(x.size(), y.size(), "dot");
  return active().dot(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

double dot(const Vector& x, const Vector& y) {
  check_same(static_cast<std::size_t>(x.size()), static_cast<std::size_t>(y.size()), "dot");
  return active().dot(x.data(), y.data(), static_cast<std::size_t>(x.size()));
}

double norm(const Vector& x) { return std::sqrt(dot(x, x)); }

Vector gemv(const RowMatrix& a, const Vector& x) {
  check_same(static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(x.size()), "gemv");
  Vector y(a.rows());
  active().gemv(a.data(), static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(a.cols()),
                x.data(), y.data());
  return y;
}

Vector gemv_t(const RowMatrix& a, const Vector& x) {
  check_same(static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(x.size()), "gemv_t");
  Vector y(a.cols());
  active().gemv_t(a.data(), static_cast<std::size_t>(a.rows()),
                  static_cast<std::size_t>(a.cols()), x.data(), y.data());
  return y;
}

}  // namespace diratlas::kernels
