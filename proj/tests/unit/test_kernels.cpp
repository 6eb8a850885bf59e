#include <doctest.h>

#include <cmath>
#include <vector>

#include "sae/kernels/kernels.hpp"
#include "sae/rng.hpp"

using namespace sae;
namespace k = sae::kernels;

namespace {

std::vector<const k::KernelTable*> vector_tables() {
  std::vector<const k::KernelTable*> out;
  if (k::avx2_table() && k::cpu_supports(k::Isa::avx2)) out.push_back(k::avx2_table());
  if (k::neon_table() && k::cpu_supports(k::Isa::neon)) out.push_back(k::neon_table());
  return out;
}

std::vector<double> random_vector(KeyedStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-3.0, 3.0);
  return v;
}

bool close(double a, double b) {
  return std::abs(a - b) <= 1e-13 * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("scalar kernels on small fixtures") {
  const auto& s = k::scalar_table();
  double x[] = {1, 2, 3}, y[] = {4, 5, 6}, out[3];
  CHECK(s.sum(x, 3) == 6.0);
  CHECK(s.dot(x, y, 3) == 32.0);
  CHECK(s.weighted_sum_squares(y, x, 3) == 4 + 20 + 54);
  s.axpy(2.0, x, y, 3);
  CHECK(y[2] == 12.0);
  s.multiply(x, x, out, 3);
  CHECK(out[1] == 4.0);
  double u[] = {0, 1, 2};
  std::int32_t from[] = {0, 1}, to[] = {1, 2};
  CHECK(s.edge_squared_differences(u, from, to, 2) == 2.0);
  CHECK(s.sum(x, 0) == 0.0);
}

TEST_CASE("vector kernels match the scalar reference") {
  const auto& ref = k::scalar_table();
  KeyedStream rng{2024};
  for (const auto* t : vector_tables()) {
    for (std::size_t n = 0; n < 70; ++n) {
      auto x = random_vector(rng, n), y = random_vector(rng, n), w = random_vector(rng, n);
      CHECK(close(t->sum(x.data(), n), ref.sum(x.data(), n)));
      CHECK(close(t->dot(x.data(), y.data(), n), ref.dot(x.data(), y.data(), n)));
      CHECK(close(t->weighted_sum_squares(w.data(), x.data(), n),
                  ref.weighted_sum_squares(w.data(), x.data(), n)));

      // Elementwise kernels are bit-identical.
      auto y1 = y, y2 = y;
      t->axpy(0.37, x.data(), y1.data(), n);
      ref.axpy(0.37, x.data(), y2.data(), n);
      CHECK(y1 == y2);
      std::vector<double> o1(n), o2(n);
      t->multiply(x.data(), y.data(), o1.data(), n);
      ref.multiply(x.data(), y.data(), o2.data(), n);
      CHECK(o1 == o2);

      std::vector<std::int32_t> from(n), to(n);
      for (std::size_t e = 0; e < n; ++e) {
        from[e] = static_cast<std::int32_t>(rng() % (n + 1));
        to[e] = static_cast<std::int32_t>(rng() % (n + 1));
      }
      auto u = random_vector(rng, n + 1);
      CHECK(close(t->edge_squared_differences(u.data(), from.data(), to.data(), n),
                  ref.edge_squared_differences(u.data(), from.data(), to.data(), n)));
    }
  }
}

TEST_CASE("runtime selection") {
  const auto before = k::active_isa();
  CHECK(k::select(k::Isa::scalar));
  CHECK(k::active_isa() == k::Isa::scalar);
  CHECK(&k::active() == &k::scalar_table());
  if (!k::cpu_supports(k::Isa::neon)) {
    CHECK_FALSE(k::select(k::Isa::neon));
    CHECK(k::active_isa() == k::Isa::scalar);
  }
  k::select(before);
  CHECK(k::active_isa() == before);
}
