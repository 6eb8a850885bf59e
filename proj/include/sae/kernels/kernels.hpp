#pragma once

// Dense arithmetic inner loops shared by the estimators and the sampler.
//
// Each kernel has a scalar reference implementation and vectorized variants
// (AVX2 on x86-64, NEON on AArch64). The active variant is chosen once at
// startup from the CPU features; SAE_SIMD=scalar forces the reference path.
// Elementwise kernels are bit-identical across variants; reductions agree to
// rounding (they sum in a different order).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace sae::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

struct KernelTable {
  // sum_i x_i
  double (*sum)(const double* x, std::size_t n);
  // sum_i x_i * y_i
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i w_i * x_i * x_i
  double (*weighted_sum_squares)(const double* w, const double* x,
                                 std::size_t n);
  // y_i += a * x_i
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // out_i = x_i * y_i
  void (*multiply)(const double* x, const double* y, double* out,
                   std::size_t n);
  // sum_e (u[from_e] - u[to_e])^2
  double (*edge_squared_differences)(const double* u, const std::int32_t* from,
                                     const std::int32_t* to, std::size_t edges);
};

const KernelTable& scalar_table();
// Null when the variant was not compiled for this target.
const KernelTable* avx2_table();
const KernelTable* neon_table();

bool cpu_supports(Isa isa);

// Variant selected for this process.
Isa active_isa();
const KernelTable& active();

// Override the selection (tests, SAE_SIMD). Returns false when the requested
// variant is unavailable on this machine; the selection is then unchanged.
bool select(Isa isa);

inline double sum(std::span<const double> x) {
  return active().sum(x.data(), x.size());
}
inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline double weighted_sum_squares(std::span<const double> w,
                                   std::span<const double> x) {
  return active().weighted_sum_squares(w.data(), x.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void multiply(std::span<const double> x, std::span<const double> y,
                     std::span<double> out) {
  active().multiply(x.data(), y.data(), out.data(), x.size());
}
inline double edge_squared_differences(std::span<const double> u,
                                       std::span<const std::int32_t> from,
                                       std::span<const std::int32_t> to) {
  return active().edge_squared_differences(u.data(), from.data(), to.data(),
                                           from.size());
}

}  // namespace sae::kernels
