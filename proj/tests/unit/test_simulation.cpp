#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "sae/error.hpp"
#include "sae/rng.hpp"
#include "sae/simulation.hpp"

using namespace sae;
using namespace sae::simulation;
using survey::Stratum;

namespace {

// One ADM1 with `rural` + `urban` clusters of `hh` households each.
survey::SurveyDataset frame(int rural, int urban, int hh = 2, bool equal_weights = true) {
  std::vector<survey::HouseholdRecord> out;
  for (int c = 0; c < rural + urban; ++c)
    for (int h = 0; h < hh; ++h) {
      survey::HouseholdRecord r;
      r.cluster_id = "C" + std::to_string(c);
      r.household_id = r.cluster_id + "-" + std::to_string(h);
      r.adm1_id = "R1";
      r.adm2_id = c % 2 ? "A" : "B";
      r.stratum = c < rural ? Stratum::rural : Stratum::urban;
      r.weight = equal_weights ? 1.0 : 1.0 + c;
      out.push_back(r);
    }
  return survey::SurveyDataset(std::move(out));
}

}  // namespace

TEST_CASE("largest-remainder allocation") {
  auto a = allocate(30, {{Stratum::rural, 70}, {Stratum::urban, 30}}, "R1");
  CHECK(a[Stratum::rural] == 21);
  CHECK(a[Stratum::urban] == 9);
  // 5 split 50/50: tie goes to rural.
  auto t = allocate(5, {{Stratum::rural, 10}, {Stratum::urban, 10}}, "R1");
  CHECK(t[Stratum::rural] == 3);
  CHECK(t[Stratum::urban] == 2);
  // 2 of (2, 1): quotas 4/3 and 2/3, urban has the larger remainder.
  auto r = allocate(2, {{Stratum::rural, 2}, {Stratum::urban, 1}}, "R1");
  CHECK(r[Stratum::rural] == 1);
  CHECK(r[Stratum::urban] == 1);
  try {
    allocate(12, {{Stratum::rural, 7}, {Stratum::urban, 3}}, "North");
    FAIL("expected allocation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("North/") != std::string::npos);
  }
  for (int total = 0; total <= 40; ++total) {
    auto s = allocate(total, {{Stratum::rural, 29}, {Stratum::urban, 11}}, "R");
    CHECK(s[Stratum::rural] + s[Stratum::urban] == total);
  }
}

TEST_CASE("subsample keeps whole clusters and is reproducible") {
  auto full = frame(7, 3, 3, false);
  std::vector<double> y(full.households().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(i);
  SubsampleDesign d{5, 1, 99};
  auto a = subsample(full, y, d, 4);
  auto b = subsample(full, y, d, 4);
  CHECK(a.y == b.y);
  CHECK(a.data.clusters().size() == 5);
  for (const auto& c : a.data.clusters()) CHECK(c.households.size() == 3);
  // Indicator follows its household.
  for (std::size_t i = 0; i < a.y.size(); ++i)
    CHECK(full.household(static_cast<std::size_t>(a.y[i])).household_id ==
          a.data.household(i).household_id);
  auto picked = subsample_clusters(full, d, 4);
  CHECK(std::set<std::size_t>(picked.begin(), picked.end()).size() == picked.size());
  CHECK(subsample_clusters(full, d, 5) != picked);  // different replicate key (overwhelmingly)
  CHECK_THROWS_AS(subsample_clusters(full, SubsampleDesign{11, 1, 1}, 0), Error);
  CHECK_THROWS_AS(subsample_clusters(full, SubsampleDesign{0, 1, 1}, 0), Error);
}

TEST_CASE("equal weights reduce to simple random sampling") {
  auto full = frame(14, 6);
  SubsampleDesign d{10, 1, 7};  // 7 rural of 14, 3 urban of 6
  std::vector<int> hits(full.clusters().size(), 0);
  const int reps = 10000;
  for (int r = 0; r < reps; ++r)
    for (std::size_t ci : subsample_clusters(full, d, r)) ++hits[ci];
  for (std::size_t ci = 0; ci < hits.size(); ++ci) {
    const double expected = full.clusters()[ci].stratum == Stratum::rural ? 7.0 / 14 : 3.0 / 6;
    CHECK(std::abs(hits[ci] / double(reps) - expected) < 0.02);
  }
}

TEST_CASE("single draw is proportional to weight") {
  auto full = frame(4, 0, 1, false);  // weights 1..4
  SubsampleDesign d{1, 1, 3};
  std::vector<int> hits(4, 0);
  const int reps = 20000;
  for (int r = 0; r < reps; ++r) ++hits[subsample_clusters(full, d, r)[0]];
  for (int c = 0; c < 4; ++c) CHECK(std::abs(hits[c] / double(reps) - (c + 1) / 10.0) < 0.015);
}

TEST_CASE("winkler score") {
  CHECK(std::abs(winkler_score(0.2, 0.4, 0.3) - 0.2) < 1e-12);
  CHECK(std::abs(winkler_score(0.2, 0.4, 0.5) - 2.2) < 1e-12);
  CHECK(std::abs(winkler_score(0.2, 0.4, 0.1) - 2.2) < 1e-12);
  CHECK_THROWS_AS(winkler_score(0.4, 0.2, 0.3), Error);
  KeyedStream rng{5};
  for (int t = 0; t < 200; ++t) {
    double lo = rng.uniform(), hi = lo + rng.uniform(), y = rng.uniform(-1, 2), s = rng.uniform(-3, 3);
    CHECK(winkler_score(lo + s, hi + s, y + s) == doctest::Approx(winkler_score(lo, hi, y)).epsilon(1e-9));
  }
}

TEST_CASE("MIS >= MIL with equality iff all covered") {
  KeyedStream rng{6};
  for (int t = 0; t < 1000; ++t) {
    std::vector<IntervalEstimate> est;
    std::vector<GoldValue> gold;
    bool all_in = true;
    for (int a = 0; a < 5; ++a) {
      const double lo = rng.uniform(), hi = lo + 0.3 * rng.uniform(), g = rng.uniform();
      all_in = all_in && lo <= g && g <= hi;
      est.push_back({"a" + std::to_string(a), 0.5 * (lo + hi), lo, hi, {}});
      gold.push_back({"a" + std::to_string(a), g});
    }
    auto m = evaluate(est, gold);
    CHECK(m.mis >= m.mil);
    CHECK((m.mis == m.mil) == all_in);
    CHECK(m.coverage >= 0.0);
    CHECK(m.coverage <= 1.0);
  }
}

TEST_CASE("evaluate examples") {
  std::vector<IntervalEstimate> est{{"x", 0.1, 0.0, 0.3, 0.1}, {"y", 0.2, 0.1, 0.3, 0.5}};
  std::vector<GoldValue> gold{{"y", 0.2}, {"x", 0.2}};
  auto m = evaluate(est, gold);
  CHECK(m.mae == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(m.coverage == 1.0);
  CHECK(m.mil == doctest::Approx(0.25));
  CHECK(m.bands[design::ReliabilityBand::unrestricted] == 1);
  CHECK(m.bands[design::ReliabilityBand::unreliable] == 1);

  std::vector<double> a{0.1, 0.3, 0.2, 0.9}, b{1, 3, 2, 9};
  CHECK(spearman(a, b) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> ties{1, 2, 2, 3}, ord{1, 2, 3, 4};
  CHECK(spearman(ties, ord) == doctest::Approx(4.5 / std::sqrt(22.5)).epsilon(1e-14));
  std::vector<double> flat{1, 1, 1};
  CHECK(std::isnan(spearman(flat, std::vector<double>{1, 2, 3})));

  std::vector<GoldValue> off{{"x", 0.2}, {"z", 0.1}};
  try {
    evaluate(est, off);
    FAIL("expected alignment error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("y") != std::string::npos);
    CHECK(msg.find("z") != std::string::npos);
  }
}

TEST_CASE("direct pipeline on the full survey reproduces the gold standard") {
  SyntheticConfig cfg;
  auto pop = synthesize(cfg, 0);
  auto direct = design::direct_estimates(pop.survey, pop.y, design::Level::adm2);
  design::cv_classify(direct);
  auto est = direct_intervals(direct);
  std::vector<GoldValue> gold;
  for (const auto& d : direct) gold.push_back({d.area_id, d.p_hat});
  auto m = evaluate(est, gold);
  CHECK(m.mae == 0.0);
  CHECK(m.coverage == 1.0);
  CHECK(m.mis == m.mil);
}

TEST_CASE("synthetic population") {
  SyntheticConfig cfg;
  auto a = synthesize(cfg, 3), b = synthesize(cfg, 3), c = synthesize(cfg, 4);
  CHECK(a.y == b.y);
  CHECK(a.y != c.y);
  CHECK(a.survey.clusters().size() == 200);
  CHECK(a.survey.households().size() == 2000);
  CHECK(a.graph.components().size() == 1);
  CHECK(a.survey.adm1_ids().size() == 2);
  REQUIRE(a.truth.size() == 10);
  for (const auto& t : a.truth) {
    CHECK(t.value > 0.0);
    CHECK(t.value < 1.0);
    CHECK(a.areas.at(t.area_id).urban_proportion.has_value());
  }
  // Population prevalence tracks the truth on average.
  double mean_truth = 0, mean_y = 0;
  for (const auto& t : a.truth) mean_truth += t.value / 10;
  for (double v : a.y) mean_y += v / a.y.size();
  CHECK(std::abs(mean_truth - mean_y) < 0.08);
  cfg.rho = 1.0;
  CHECK_THROWS_AS(synthesize(cfg), Error);
}

TEST_CASE("run_validation wiring") {
  SyntheticConfig cfg;
  auto pop = synthesize(cfg, 0);
  auto scaling = spatial::bym2_scaling(pop.graph);
  ValidationInput input{&pop.survey, pop.y, &pop.graph, &scaling, &pop.areas, std::nullopt};
  SubsampleDesign d{30, 2, 11};
  ValidationOptions opt;
  auto report = run_validation(input, d, opt);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].replicate == 0);
  CHECK(report.rows[1].replicate == 1);
  CHECK(report.averages.size() == 1);
  CHECK(report.averages[0].replicates == 2);

  std::ostringstream s1, s2;
  write_replicates(s1, report.rows);
  write_summary(s1, report.averages);
  auto again = run_validation(input, d, opt);
  write_replicates(s2, again.rows);
  write_summary(s2, again.averages);
  CHECK(s1.str() == s2.str());

  // Threads do not change the result.
  opt.threads = 3;
  std::ostringstream s3;
  auto threaded = run_validation(input, d, opt);
  write_replicates(s3, threaded.rows);
  write_summary(s3, threaded.averages);
  CHECK(s1.str() == s3.str());

  CHECK_THROWS_AS(run_validation(input, SubsampleDesign{30, 0, 1}, opt), Error);
  CHECK_THROWS_AS(run_validation(input, SubsampleDesign{101, 1, 1}, opt), Error);
}

TEST_CASE("areas without sampled EAs are excluded from the direct baseline") {
  SyntheticConfig cfg;
  cfg.clusters_per_area = 4;
  auto pop = synthesize(cfg, 1);
  auto scaling = spatial::bym2_scaling(pop.graph);
  ValidationInput input{&pop.survey, pop.y, &pop.graph, &scaling, &pop.areas, pop.truth};
  ValidationOptions opt;
  opt.models = {models::ModelKind::mean_smoothing, models::ModelKind::betabinomial};
  opt.sampler.chains = 1;
  opt.sampler.warmup = 60;
  opt.sampler.samples = 40;
  auto rows = validate_replicate(input, SubsampleDesign{3, 1, 2}, opt, 0);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].method == "direct");
  CHECK(rows[0].excluded_areas >= 2);  // 3 EAs over 5 areas per ADM1
  CHECK(rows[0].metrics.areas + rows[0].excluded_areas == 10);
  for (std::size_t i = 1; i < 3; ++i) {
    INFO(rows[i].failure);
    CHECK_FALSE(rows[i].failed);
    CHECK(rows[i].excluded_areas == 0);
    CHECK(rows[i].metrics.areas == 10);
  }
}
