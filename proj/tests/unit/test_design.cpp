#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "sae/design.hpp"
#include "sae/error.hpp"
#include "sae/rng.hpp"
#include "test_util.hpp"

using namespace sae;
using namespace sae::design;

namespace {

// Independent oracle for the linearized variance: expanded sums, no reuse of
// the library's helpers.
double oracle_variance(const AreaSample& a) {
  double sw = 0, swy = 0;
  for (const auto& c : a.clusters)
    for (std::size_t i = 0; i < c.y.size(); ++i) {
      sw += c.w[i];
      swy += c.w[i] * c.y[i];
    }
  const double p = swy / sw;
  std::vector<double> z;
  for (const auto& c : a.clusters) {
    double s = 0;
    for (std::size_t i = 0; i < c.y.size(); ++i) s += c.w[i] * (c.y[i] - p);
    z.push_back(s);
  }
  const double m = z.size();
  double zbar = 0;
  for (double v : z) zbar += v / m;
  double ss = 0;
  for (double v : z) ss += (v - zbar) * (v - zbar);
  return m / (m - 1) * ss / (sw * sw);
}

survey::HouseholdRecord hh(std::string id, std::string cluster, std::string adm1,
                           std::string adm2, double w,
                           survey::Stratum s = survey::Stratum::rural) {
  survey::HouseholdRecord h;
  h.household_id = std::move(id);
  h.cluster_id = std::move(cluster);
  h.adm1_id = std::move(adm1);
  h.adm2_id = std::move(adm2);
  h.weight = w;
  h.stratum = s;
  return h;
}

}  // namespace

TEST_CASE("hajek") {
  std::vector<double> y{1, 0}, w{1, 1}, w2{3, 1};
  CHECK(hajek(y, w) == 0.5);
  CHECK(hajek(y, w2) == 0.75);
  std::vector<double> ones{1, 1, 1}, wr{0.2, 7, 3};
  CHECK(hajek(ones, wr) == 1.0);
  std::vector<double> empty;
  CHECK_THROWS_AS(hajek(empty, empty), Error);

  KeyedStream rng{3};
  for (int t = 0; t < 100; ++t) {
    std::vector<double> yy(7), ww(7), scaled(7);
    for (int i = 0; i < 7; ++i) {
      yy[i] = rng.uniform() < 0.4;
      ww[i] = rng.uniform(0.1, 5.0);
      scaled[i] = ww[i] * 8.0;  // power of two keeps the check exact
    }
    CHECK(hajek(yy, ww) == doctest::Approx(hajek(yy, scaled)).epsilon(1e-15));
  }
}

TEST_CASE("linearized variance fixtures") {
  AreaSample a{"A", {{{1, 1}, {1, 1}}, {{0, 0}, {1, 1}}}};
  auto r = linearized_variance(a);
  CHECK(r.p_hat == 0.5);
  CHECK(std::abs(r.v_hat - 0.25) < 1e-12);
  CHECK(r.dof == 1.0);

  AreaSample same{"B", {{{1, 1}, {2, 3}}, {{1}, {4}}}};
  CHECK(linearized_variance(same).v_hat == 0.0);

  // Cluster means 1, 0.5, 0 with two equal-weight households each:
  // p = 0.5, z = (1, 0, -1), v = 3/2 * 2 / 36.
  AreaSample three{"C", {{{1, 1}, {1, 1}}, {{1, 0}, {1, 1}}, {{0, 0}, {1, 1}}}};
  auto t = linearized_variance(three);
  CHECK(std::abs(t.v_hat - 3.0 / 36.0) < 1e-12);
  CHECK(std::abs(t.v_hat - oracle_variance(three)) < 1e-12);
  CHECK(t.dof == 2.0);

  AreaSample one{"D", {{{1, 0}, {1, 1}}}};
  CHECK_THROWS_AS(linearized_variance(one), Error);
}

TEST_CASE("linearized variance agrees with the oracle on random areas") {
  KeyedStream rng{17};
  for (int t = 0; t < 200; ++t) {
    AreaSample a{"R", {}};
    const int m = 2 + static_cast<int>(rng() % 6);
    for (int c = 0; c < m; ++c) {
      ClusterSample cs;
      const int n = 1 + static_cast<int>(rng() % 5);
      for (int i = 0; i < n; ++i) {
        cs.y.push_back(rng.uniform() < 0.3);
        cs.w.push_back(rng.uniform(0.5, 3.0));
      }
      a.clusters.push_back(cs);
    }
    auto r = linearized_variance(a);
    CHECK(r.v_hat >= 0.0);
    CHECK(r.v_hat == doctest::Approx(oracle_variance(a)).epsilon(1e-12));
    if (m == 2) {
      // Two clusters: 2 * 2 * ((z1 - z2) / 2)^2 / W^2 = (z1 - z2)^2 / W^2.
      double sw = 0;
      for (auto& c : a.clusters)
        for (double w : c.w) sw += w;
      double z[2] = {0, 0};
      for (int c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < a.clusters[c].y.size(); ++i)
          z[c] += a.clusters[c].w[i] * (a.clusters[c].y[i] - r.p_hat);
      CHECK(r.v_hat == doctest::Approx((z[0] - z[1]) * (z[0] - z[1]) / (sw * sw)).epsilon(1e-12));
    }
  }
}

TEST_CASE("phantom cluster") {
  AreaSample one{"A", {{{1, 0, 1}, {40, 40, 40}}}};
  auto aug = phantom_augment(one, 0.3, 120.0);
  REQUIRE(aug.clusters.size() == 2);
  CHECK(aug.clusters[1].phantom);
  CHECK(aug.clusters[1].w[0] == 120.0);
  CHECK(aug.clusters[1].y[0] == 0.3);
  auto r = linearized_variance(aug);
  CHECK(r.dof == 1.0);
  CHECK(r.v_hat == doctest::Approx(oracle_variance(aug)).epsilon(1e-12));

  // Phantom prevalence equal to the lone cluster's mean leaves nothing but
  // weights: every residual is relative to the same p, so v = 0.
  AreaSample flat{"B", {{{1, 0}, {50, 50}}}};
  CHECK(linearized_variance(phantom_augment(flat, 0.5, 30.0)).v_hat == doctest::Approx(0.0));

  AreaSample two{"C", {{{1}, {1}}, {{0}, {1}}}};
  CHECK_THROWS_AS(phantom_augment(two, 0.3, 1.0), Error);
}

TEST_CASE("effective sample size variance") {
  std::vector<double> y{1, 0}, w{1, 1};
  auto r = effective_sample_variance(y, w);
  CHECK(r.n_effective == 2.0);
  CHECK(r.v_hat == 0.125);
  CHECK(r.dof == 1.0);

  std::vector<double> w2{0.8, 0.2};
  CHECK(effective_sample_variance(y, w2).n_effective == doctest::Approx(1.0 / 0.68).epsilon(1e-12));

  std::vector<double> y5{1, 0, 0, 1, 1}, w5(5, 2.5);
  auto e = effective_sample_variance(y5, w5);
  CHECK(std::abs(e.n_effective - 5.0) < 1e-12);
  CHECK(std::abs(e.v_hat - 0.6 * 0.4 / 5.0) < 1e-15);

  std::vector<double> y1{1}, w1{3};
  CHECK(effective_sample_variance(y1, w1).degenerate_dof);
}

TEST_CASE("logit scale and cv bands") {
  DirectEstimate e;
  e.p_hat = 0.5;
  e.v_hat = 0.01;
  auto l = logit_scale(e);
  CHECK(l.logit == 0.0);
  CHECK(std::abs(l.variance - 0.16) < 1e-12);
  e.v_hat = 0;
  CHECK(logit_scale(e).variance == 0.0);
  e.p_hat = 0.1;
  e.v_hat = 0.0009;
  CHECK(std::abs(logit_scale(e).variance - 0.0009 / (0.01 * 0.81)) < 1e-12);
  CHECK(std::abs(1.0 / (1.0 + std::exp(-logit_scale(e).logit)) - 0.1) < 1e-12);
  e.p_hat = 0.0;
  CHECK_THROWS_AS(logit_scale(e), Error);

  CHECK(band_for(0.1) == ReliabilityBand::unrestricted);
  CHECK(band_for(0.166) == ReliabilityBand::caution);
  CHECK(band_for(0.333) == ReliabilityBand::caution);
  CHECK(band_for(0.5) == ReliabilityBand::unreliable);
  CHECK(band_for(std::nullopt) == ReliabilityBand::undefined);

  std::vector<DirectEstimate> es(3);
  es[0].p_hat = 0.5;
  es[0].v_hat = 0.0025;
  es[1].p_hat = 0.1;
  es[1].v_hat = 0.0025;
  es[2].p_hat = 0.0;
  es[2].v_hat = 0.0;
  cv_classify(es);
  CHECK(*es[0].cv == doctest::Approx(0.1));
  CHECK(es[0].band == ReliabilityBand::unrestricted);
  CHECK(*es[1].cv == doctest::Approx(0.5));
  CHECK(es[1].band == ReliabilityBand::unreliable);
  CHECK_FALSE(es[2].cv.has_value());
  CHECK(es[2].band == ReliabilityBand::undefined);
}

TEST_CASE("direct estimates over a dataset") {
  using survey::Stratum;
  std::vector<survey::HouseholdRecord> h{
      hh("h1", "c1", "R1", "D1", 1), hh("h2", "c1", "R1", "D1", 1),
      hh("h3", "c2", "R1", "D1", 1), hh("h4", "c2", "R1", "D1", 1),
      hh("h5", "c3", "R1", "D2", 2), hh("h6", "c3", "R1", "D2", 2),
  };
  survey::SurveyDataset data(h);
  std::vector<double> y{1, 1, 0, 0, 1, 0};

  auto adm2 = direct_estimates(data, y, Level::adm2);
  REQUIRE(adm2.size() == 2);
  CHECK(adm2[0].area_id == "D1");
  CHECK(adm2[0].p_hat == 0.5);
  CHECK(std::abs(adm2[0].v_hat - 0.25) < 1e-12);
  CHECK(adm2[0].n_clusters == 2);
  CHECK_FALSE(adm2[0].phantom_used);

  // D2 has one cluster. Phantom: ADM1 prevalence 4/8, mean cluster weight 8/3.
  CHECK(adm2[1].phantom_used);
  CHECK(adm2[1].p_hat == 0.5);
  CHECK(adm2[1].dof == 1.0);
  AreaSample manual{"D2", {{{1, 0}, {2, 2}}, {{0.5}, {8.0 / 3.0}, true}}};
  CHECK(adm2[1].v_hat == doctest::Approx(oracle_variance(manual)).epsilon(1e-12));

  DirectOptions no_phantom;
  no_phantom.phantom = false;
  auto raw = direct_estimates(data, y, Level::adm2, no_phantom);
  CHECK(std::isnan(raw[1].v_hat));
  CHECK_FALSE(raw[1].has_variance());

  auto adm1 = direct_estimates(data, y, Level::adm1);
  REQUIRE(adm1.size() == 1);
  CHECK(adm1[0].p_hat == 0.5);
  CHECK(adm1[0].dof == 2.0);

  std::vector<double> zeros(6, 0.0);
  DirectOptions adj;
  adj.continuity_adjustment = true;
  auto b = direct_estimates(data, zeros, Level::adm1, adj);
  // (0 + 0.5 * 8/6) / (8 + 8/6)
  CHECK(b[0].p_hat == doctest::Approx((0.5 * 8.0 / 6.0) / (8.0 + 8.0 / 6.0)).epsilon(1e-14));
  CHECK(b[0].boundary_adjusted);

  // Self-comparison of the pipeline is exact.
  auto again = direct_estimates(data, y, Level::adm2);
  CHECK(again[1].v_hat == adm2[1].v_hat);
}

TEST_CASE("direct and cluster tables round trip") {
  using survey::Stratum;
  std::vector<survey::HouseholdRecord> h{
      hh("h1", "c1", "R1", "D1", 1.5), hh("h2", "c1", "R1", "D1", 1.5),
      hh("h3", "c2", "R1", "D1", 0.7, Stratum::urban),
      hh("h4", "c3", "R1", "D2", 2.0),
  };
  survey::SurveyDataset data(h);
  std::vector<double> y{1, 0, 1, 1};
  auto est = direct_estimates(data, y, Level::adm2);

  testutil::TempDir dir;
  std::ostringstream out;
  write_direct(out, est);
  auto p = dir.write("direct.csv", out.str());
  auto back = load_direct(p, true);
  REQUIRE(back.size() == est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    CHECK(back[i].area_id == est[i].area_id);
    CHECK(back[i].p_hat == est[i].p_hat);
    CHECK(back[i].v_hat == est[i].v_hat);
    CHECK(back[i].dof == est[i].dof);
    CHECK(back[i].band == est[i].band);
    CHECK(back[i].phantom_used == est[i].phantom_used);
  }
  std::ostringstream again;
  write_direct(again, back);
  CHECK(again.str() == out.str());

  auto nodof = dir.write("nodof.csv", "area_id,p_hat,v_hat\nD1,0.5,0.01\n");
  CHECK_NOTHROW(load_direct(nodof, false));
  try {
    load_direct(nodof, true);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema);
    CHECK(std::string(e.what()).find("dof") != std::string::npos);
  }

  auto counts = cluster_counts(data, y);
  REQUIRE(counts.size() == 3);
  CHECK(counts[0].y == 1);
  CHECK(counts[0].n == 2);
  CHECK(counts[1].stratum == Stratum::urban);
  std::ostringstream cc;
  write_cluster_counts(cc, counts);
  auto cp = dir.write("clusters.csv", cc.str());
  auto cb = load_cluster_counts(cp);
  REQUIRE(cb.size() == 3);
  CHECK(cb[2].adm2_id == "D2");
  CHECK(cb[2].weight == 2.0);
}
