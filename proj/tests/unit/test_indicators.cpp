#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sae/error.hpp"
#include "sae/indicators.hpp"
#include "sae/rng.hpp"
#include "test_util.hpp"

using namespace sae;
using namespace sae::indicators;
using survey::Sex;

namespace {

survey::EnergyRequirementTable table() {
  return survey::EnergyRequirementTable(
      {{Sex::female, 0, 5, 1000}, {Sex::female, 5, INFINITY, 2000},
       {Sex::male, 0, 5, 1100}, {Sex::male, 5, INFINITY, 2600}},
      2000);
}

survey::FoodComposition composition() {
  return survey::FoodComposition({{"maize", {{"b12", 10}, {"folate", 5}}, 1.0},
                                  {"fish", {{"b12", 15}, {"folate", 1}}, 0.5}});
}

survey::ConsumptionLine line(std::string item, double q, survey::Unit u = {}) {
  return {std::move(item), q, std::move(u), 7};
}

}  // namespace

TEST_CASE("adult female equivalents") {
  auto t = table();
  std::vector<survey::Member> one{{30, Sex::female}};
  CHECK(afe(one, t) == 1.0);
  std::vector<survey::Member> two{{30, Sex::female}, {45, Sex::female}};
  CHECK(afe(two, t) == 2.0);
  std::vector<survey::Member> mix{{30, Sex::female}, {2, Sex::female}};
  CHECK(afe(mix, t) == 1.5);
  std::vector<survey::Member> child{{2, Sex::male}};
  CHECK(afe(child, t) == doctest::Approx(0.55));
  std::vector<survey::Member> bad{{-1, Sex::male}};
  CHECK_THROWS_AS(afe(bad, t), Error);
}

TEST_CASE("daily quantities") {
  auto comp = composition();
  survey::UnitConversionTable conv;
  conv.add("heap", "*", 350);
  std::vector<survey::ConsumptionLine> a{line("maize", 700)};
  CHECK(daily_quantities(a, conv, comp).at("maize") == 100.0);
  std::vector<survey::ConsumptionLine> b{line("fish", 700)};
  CHECK(daily_quantities(b, conv, comp).at("fish") == 50.0);
  std::vector<survey::ConsumptionLine> z{line("maize", 0)};
  CHECK(daily_quantities(z, conv, comp).at("maize") == 0.0);
  std::vector<survey::ConsumptionLine> kg{line("maize", 0.7, survey::Unit::parse("kg"))};
  CHECK(daily_quantities(kg, conv, comp).at("maize") == doctest::Approx(100.0));
  std::vector<survey::ConsumptionLine> heap{line("maize", 2, survey::Unit::parse("heap"))};
  CHECK(daily_quantities(heap, conv, comp).at("maize") == 100.0);
  std::vector<survey::ConsumptionLine> tin{line("maize", 2, survey::Unit::parse("tin"))};
  try {
    daily_quantities(tin, conv, comp);
    FAIL("expected lookup error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("tin") != std::string::npos);
  }
}

TEST_CASE("apparent intake") {
  survey::FoodComposition comp({{"x", {{"b12", 10}}, 1.0},
                                {"p", {{"b12", 5}}, 1.0},
                                {"q", {{"b12", 15}}, 1.0}});
  CHECK(apparent_intake({{"x", 200}}, comp, 2, "b12") == 10.0);
  CHECK(apparent_intake({}, comp, 1, "b12") == 0.0);
  CHECK(apparent_intake({{"p", 100}, {"q", 100}}, comp, 1, "b12") == 20.0);
  try {
    apparent_intake({{"nope", 1}, {"gone", 2}}, comp, 1, "b12");
    FAIL("expected error");
  } catch (const Error& e) {
    const std::string m = e.what();
    CHECK(m.find("nope") != std::string::npos);
    CHECK(m.find("gone") != std::string::npos);
  }
  CHECK_THROWS_AS(apparent_intake({}, comp, 0, "b12"), Error);

  // Linear in each quantity with slope C / 100 / afe.
  KeyedStream rng{4};
  for (int t = 0; t < 20; ++t) {
    const double qp = rng.uniform(0, 300), qq = rng.uniform(0, 300), a = rng.uniform(0.3, 6);
    const double base = apparent_intake({{"p", qp}, {"q", qq}}, comp, a, "b12");
    const double bumped = apparent_intake({{"p", qp + 10}, {"q", qq}}, comp, a, "b12");
    CHECK((bumped - base) / 10 == doctest::Approx(5.0 / 100.0 / a).epsilon(1e-9));
  }
}

TEST_CASE("classification") {
  auto r = threshold_rule("b12", 10);
  CHECK(classify_inadequate({"h", "b12", 5, 1}, r));
  CHECK_FALSE(classify_inadequate({"h", "b12", 10, 1}, r));
  ProbabilityCurve curve({0, 8, 20}, {1.0, 0.6, 0.0});
  auto iron = probability_rule("iron", curve);
  CHECK(curve(8) == 0.6);
  CHECK(classify_inadequate({"h", "iron", 8, 1}, iron));
  CHECK_FALSE(classify_inadequate({"h", "iron", 15, 1}, iron));
  CHECK_THROWS_AS(classify_inadequate({"h", "folate", 8, 1}, iron), Error);
  CHECK_THROWS_AS(ProbabilityCurve({0, 1}, {0.2, 0.9}), Error);

  // Monotone non-increasing in intake.
  for (const auto* rule : {&r, &iron}) {
    bool prev = true;
    for (double x = 0; x < 30; x += 0.25) {
      const bool now = classify_inadequate({"h", rule->nutrient, x, 1}, *rule);
      CHECK((!now || prev));
      prev = now;
    }
  }
}

TEST_CASE("indicator pipeline and table") {
  std::vector<survey::HouseholdRecord> hs(2);
  hs[0] = {"h1", "c1", "R", "D", survey::Stratum::rural, 1.0,
           {{30, Sex::female}}, {line("maize", 700)}, false};
  hs[1] = {"h2", "c1", "R", "D", survey::Stratum::rural, 1.0,
           {{30, Sex::female}, {40, Sex::female}}, {line("maize", 0)}, true};
  survey::SurveyDataset data(hs);
  survey::UnitConversionTable conv;
  std::vector<InadequacyRule> rules{threshold_rule("b12", 5), threshold_rule("folate", 5)};
  auto rows = compute_indicators(data, composition(), conv, table(), rules);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].intake == 10.0);   // 100 g/day * 10 / 100
  CHECK(rows[0].inadequate == 0);
  CHECK(rows[1].intake == 5.0);
  CHECK(rows[1].inadequate == 0);  // exactly at threshold
  CHECK(rows[2].inadequate == 1);
  CHECK(rows[2].afe == 2.0);
  CHECK(rows[3].zero_consumption);

  testutil::TempDir dir;
  std::ostringstream out;
  write_indicators(out, rows);
  auto p = dir.write("ind.csv", out.str());
  CHECK(indicator_column(data, p, "b12") == std::vector<double>{0, 1});
  CHECK_THROWS_AS(indicator_column(data, p, "iron"), Error);

  auto cfg = load_indicator_config(dir.write("rules.json", R"({
    "reference_requirement_kcal": 2000,
    "rules": [{"nutrient": "b12", "kind": "threshold", "h_ar": 2.0},
              {"nutrient": "iron", "kind": "probability", "intake": [0, 10], "probability": [1, 0]}]})"));
  CHECK(cfg.rules.size() == 2);
  CHECK(cfg.reference_requirement == 2000);
  CHECK_THROWS_AS(load_indicator_config(dir.write("bad.json", R"({"rules": []})")), Error);
}
