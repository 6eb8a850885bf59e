#include "sae/kernels/kernels.hpp"

namespace sae::kernels {

namespace {

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double weighted_sum_squares_scalar(const double* w, const double* x,
                                   std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * x[i] * x[i];
  return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void multiply_scalar(const double* x, const double* y, double* out,
                     std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double edge_squared_differences_scalar(const double* u,
                                       const std::int32_t* from,
                                       const std::int32_t* to,
                                       std::size_t edges) {
  double s = 0.0;
  for (std::size_t e = 0; e < edges; ++e) {
    double d = u[from[e]] - u[to[e]];
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      sum_scalar,   dot_scalar,      weighted_sum_squares_scalar,
      axpy_scalar,  multiply_scalar, edge_squared_differences_scalar,
  };
  return table;
}

}  // namespace sae::kernels
