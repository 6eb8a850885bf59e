#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sae/error.hpp"
#include "sae/rng.hpp"
#include "sae/spatial_graph.hpp"
#include "test_util.hpp"

using namespace sae;
using namespace sae::spatial;

namespace {

AdjacencyGraph path3() { return parse_adjacency("A: B\nB: A,C\nC: B\n"); }

// Independent oracle: Moore-Penrose diagonal by solving L x = e_i - 1/n with
// a ridge, then removing the mean (sum-to-zero generalized inverse).
std::vector<double> pinv_diagonal(const AdjacencyGraph& g) {
  const std::size_t n = g.size();
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Gauss-Seidel on (L + 11'/n) x = e_i - 1/n; this matrix is positive
    // definite for a connected graph and its inverse minus 11'/n is L^+.
    std::vector<double> x(n, 0.0);
    for (int sweep = 0; sweep < 20000; ++sweep) {
      for (std::size_t r = 0; r < n; ++r) {
        double rhs = (r == i ? 1.0 : 0.0) - 1.0 / n;
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += x[c] / n;
        s -= x[r] / n;
        for (std::size_t nb : g.neighbors(r)) s -= x[nb];
        x[r] = (rhs - s) / (g.degree(r) + 1.0 / n);
      }
    }
    diag[i] = x[i];
  }
  return diag;
}

}  // namespace

TEST_CASE("smallest graph and symmetry errors") {
  auto g = parse_adjacency("A: B\nB: A\n");
  CHECK(g.size() == 2);
  CHECK(g.edge_count() == 1);
  CHECK(g.components().size() == 1);

  try {
    parse_adjacency("A: B\n");
    FAIL("expected an asymmetry error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::consistency);
    CHECK(std::string(e.what()).find("'A'") != std::string::npos);
    CHECK(std::string(e.what()).find("'B'") != std::string::npos);
  }
  std::vector<std::string> known{"A", "B"};
  CHECK_THROWS_AS(parse_adjacency("A: B\nB: A\nC:\n", &known), Error);
  CHECK_THROWS_AS(parse_adjacency("A: A\n"), Error);
  CHECK_THROWS_AS(parse_adjacency("A B\n"), Error);
}

TEST_CASE("isolated nodes form singleton components") {
  auto g = parse_adjacency("# comment\nA: B\nB: A\n\nC:\n");
  CHECK(g.components().size() == 2);
  CHECK(g.is_singleton(*g.index_of("C")));
  CHECK_FALSE(g.is_singleton(*g.index_of("A")));
}

TEST_CASE("grid fixture is connected") {
  // 5 x 6 lattice, 30 areas.
  std::ostringstream text;
  auto id = [](int r, int c) { return "D" + std::to_string(r * 6 + c); };
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) {
      text << id(r, c) << ":";
      std::vector<std::string> nb;
      if (r > 0) nb.push_back(id(r - 1, c));
      if (r < 4) nb.push_back(id(r + 1, c));
      if (c > 0) nb.push_back(id(r, c - 1));
      if (c < 5) nb.push_back(id(r, c + 1));
      for (std::size_t k = 0; k < nb.size(); ++k) text << (k ? "," : " ") << nb[k];
      text << "\n";
    }
  auto g = parse_adjacency(text.str());
  CHECK(g.size() == 30);
  CHECK(g.components().size() == 1);
  CHECK(g.edge_count() == 5 * 5 + 4 * 6);
}

TEST_CASE("icar quadratic") {
  auto g = path3();
  std::vector<double> u{0, 1, 2};
  CHECK(icar_quadratic(u, g) == 2.0);
  std::vector<double> c{3.5, 3.5, 3.5};
  CHECK(icar_quadratic(c, g) == 0.0);
  std::vector<double> u2{0, 2, 4};
  CHECK(icar_quadratic(u2, g) == 4.0 * icar_quadratic(u, g));
  std::vector<double> bad{1, 2};
  CHECK_THROWS_AS(icar_quadratic(bad, g), Error);

  KeyedStream rng{1};
  std::vector<double> r(3);
  for (auto& v : r) v = rng.normal();
  auto shifted = r;
  for (auto& v : shifted) v += 1.75;
  CHECK(icar_quadratic(shifted, g) == doctest::Approx(icar_quadratic(r, g)).epsilon(1e-12));
}

TEST_CASE("laplacian rows sum to zero") {
  auto g = parse_adjacency("A: B,C\nB: A,C,D\nC: A,B\nD: B\nE:\n");
  Eigen::MatrixXd l = Eigen::MatrixXd(g.laplacian());
  for (Eigen::Index r = 0; r < l.rows(); ++r) CHECK(l.row(r).sum() == 0.0);
  CHECK(l(1, 1) == 3.0);
}

TEST_CASE("bym2 scaling oracles") {
  auto s3 = bym2_scaling(path3());
  CHECK(std::abs(s3.geometric_mean_marginal_variance - std::cbrt(50.0 / 729.0)) < 1e-12);
  CHECK(std::abs(s3.alpha - 0.63980) < 1e-5);

  auto s2 = bym2_scaling(parse_adjacency("A: B\nB: A\n"));
  CHECK(std::abs(s2.geometric_mean_marginal_variance - 0.25) < 1e-12);
  CHECK(std::abs(s2.alpha - 0.5) < 1e-12);

  CHECK_THROWS_AS(bym2_scaling(parse_adjacency("A:\nB:\n")), Error);
}

TEST_CASE("bym2 scaling matches an iterative pseudo-inverse") {
  auto g = parse_adjacency("A: B,C\nB: A,C,D\nC: A,B,E\nD: B,E\nE: C,D\n");
  auto diag = pinv_diagonal(g);
  double log_sum = 0;
  for (double d : diag) log_sum += std::log(d);
  const double oracle = std::exp(log_sum / diag.size());
  CHECK(bym2_scaling(g).geometric_mean_marginal_variance ==
        doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("bym2 scaling is permutation invariant and per component") {
  auto a = bym2_scaling(parse_adjacency("A: B\nB: A,C\nC: B,D\nD: C\n"));
  auto b = bym2_scaling(parse_adjacency("D: C\nB: C,A\nC: D,B\nA: B\n"));
  CHECK(a.alpha == doctest::Approx(b.alpha).epsilon(1e-13));

  auto two = bym2_scaling(parse_adjacency("A: B\nB: A,C\nC: B\nX: Y\nY: X,Z\nZ: Y\nS:\n"));
  REQUIRE(two.components.size() == 3);
  CHECK(two.components[0].alpha == doctest::Approx(two.components[1].alpha).epsilon(1e-13));
  CHECK(two.geometric_mean_marginal_variance ==
        doctest::Approx(std::cbrt(50.0 / 729.0)).epsilon(1e-12));
  CHECK(two.components[2].size == 1);
}

TEST_CASE("scaling report and adjacency round trip") {
  auto g = parse_adjacency("A: B\nB: A\nC:\n");
  std::ostringstream report;
  write_scaling_report(report, g, bym2_scaling(g));
  CHECK(report.str() ==
        "component,size,first_area,geometric_mean_variance,alpha\n"
        "0,2,A,0.25,0.5\n1,1,C,1,1\nall,3,,0.25,0.5\n");
  std::ostringstream adj;
  write_adjacency(adj, g);
  CHECK(adj.str() == "A: B\nB: A\nC:\n");
  testutil::TempDir dir;
  auto p = dir.write("adj.txt", adj.str());
  CHECK(build_graph(p).edge_count() == 1);
}
