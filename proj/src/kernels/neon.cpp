#include "sae/kernels/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

namespace sae::kernels {

namespace {

double sum_neon(const double* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vld1q_f64(x + i));
    acc1 = vaddq_f64(acc1, vld1q_f64(x + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    acc1 = vaddq_f64(acc1,
                     vmulq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2)));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double weighted_sum_squares_neon(const double* w, const double* x,
                                 std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t xv = vld1q_f64(x + i);
    acc = vaddq_f64(acc, vmulq_f64(vmulq_f64(vld1q_f64(w + i), xv), xv));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += w[i] * x[i] * x[i];
  return s;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(av, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] += a * x[i];
}

void multiply_neon(const double* x, const double* y, double* out,
                   std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

// No gather on NEON; pairs of edges are loaded lane by lane.
double edge_squared_differences_neon(const double* u, const std::int32_t* from,
                                     const std::int32_t* to,
                                     std::size_t edges) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t e = 0;
  for (; e + 2 <= edges; e += 2) {
    float64x2_t a = vsetq_lane_f64(u[from[e + 1]], vdupq_n_f64(u[from[e]]), 1);
    float64x2_t b = vsetq_lane_f64(u[to[e + 1]], vdupq_n_f64(u[to[e]]), 1);
    float64x2_t d = vsubq_f64(a, b);
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double s = vaddvq_f64(acc);
  for (; e < edges; ++e) {
    double d = u[from[e]] - u[to[e]];
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{
      sum_neon,  dot_neon,      weighted_sum_squares_neon,
      axpy_neon, multiply_neon, edge_squared_differences_neon,
  };
  return &table;
}

}  // namespace sae::kernels

#else

namespace sae::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace sae::kernels

#endif
