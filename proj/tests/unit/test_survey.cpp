#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/rng.hpp"
#include "sae/survey_data.hpp"
#include "test_util.hpp"

using namespace sae;
using namespace sae::survey;

namespace {

const char* kHouseholds =
    "household_id,cluster_id,adm1_id,adm2_id,stratum,weight\n"
    "h1,C1,R1,D1,rural,10.5\n"
    "h2,C1,R1,D1,rural,10.5\n"
    "h3,C2,R1,D2,urban,0.1\n"
    "h4,C2,R1,D2,urban,3.3333333333333335\n";

}  // namespace

TEST_CASE("load a well-formed survey") {
  testutil::TempDir dir;
  auto data = load_survey({dir.write("hh.csv", kHouseholds)});
  CHECK(data.households().size() == 4);
  CHECK(data.clusters().size() == 2);
  CHECK(data.clusters()[1].stratum == Stratum::urban);
  CHECK(data.clusters()[0].total_weight == 21.0);
  CHECK(data.adm2_ids() == std::vector<std::string>{"D1", "D2"});
  CHECK(data.adm1_of("D2") == "R1");
  CHECK(*data.find_household("h3") == 2);
}

TEST_CASE("re-serialization is lossless") {
  testutil::TempDir dir;
  auto data = load_survey({dir.write("hh.csv", kHouseholds)});
  std::ostringstream out;
  write_households(out, data);
  auto p = dir.write("again.csv", out.str());
  auto back = load_survey({p});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.household(i).weight == data.household(i).weight);
    CHECK(back.household(i).cluster_id == data.household(i).cluster_id);
  }
  auto t = csv::read(p);
  CHECK(t.cell(3, t.column("weight")) == "3.3333333333333335");
  CHECK(t.cell(2, t.column("weight")) == "0.1");
}

TEST_CASE("survey validation errors") {
  testutil::TempDir dir;
  auto zero = dir.write("z.csv",
                        "household_id,cluster_id,adm1_id,adm2_id,stratum,weight\n"
                        "h1,C1,R1,D1,rural,1\nhX,C1,R1,D1,rural,0\n");
  try {
    load_survey({zero});
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::validation);
    CHECK(std::string(e.what()).find("hX") != std::string::npos);
  }

  auto span = dir.write("s.csv",
                        "household_id,cluster_id,adm1_id,adm2_id,stratum,weight\n"
                        "h1,C1,R1,A,rural,1\nh2,C1,R1,B,rural,1\n");
  try {
    load_survey({span});
    FAIL("expected consistency error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::consistency);
    const std::string msg = e.what();
    CHECK(msg.find("C1") != std::string::npos);
    CHECK(msg.find("'A'") != std::string::npos);
    CHECK(msg.find("'B'") != std::string::npos);
  }

  auto missing = dir.write("m.csv", "household_id,cluster_id,adm1_id,adm2_id,weight\nh1,C1,R1,A,1\n");
  try {
    load_survey({missing});
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema);
    CHECK(std::string(e.what()).find("stratum") != std::string::npos);
  }

  auto dup = dir.write("d.csv",
                       "household_id,cluster_id,adm1_id,adm2_id,stratum,weight\n"
                       "h1,C1,R1,A,rural,1\nh1,C1,R1,A,rural,1\n");
  CHECK_THROWS_AS(load_survey({dup}), Error);

  auto strata = dir.write("st.csv",
                          "household_id,cluster_id,adm1_id,adm2_id,stratum,weight\n"
                          "h1,C1,R1,A,rural,1\nh2,C1,R1,A,urban,1\n");
  CHECK_THROWS_AS(load_survey({strata}), Error);
}

TEST_CASE("schema mapping, members and consumption") {
  testutil::TempDir dir;
  auto hh = dir.write("hh.csv",
                      "hhid,ea,region,district,urb,wt\n"
                      "h1,C1,R1,D1,1,2\nh2,C1,R1,D1,1,2\n");
  auto members = dir.write("mem.csv",
                           "household_id,age_years,sex\nh1,30,female\nh1,4,m\nh2,61,2\n");
  auto cons = dir.write("cons.csv",
                        "household_id,food_item_id,quantity,unit,recall_days\n"
                        "h1,maize,700,g,7\nh2,maize,0,kg,7\n");
  auto schema = SurveySchema::from_json(nlohmann::json::parse(R"({
      "households": {"household_id": "hhid", "cluster_id": "ea", "adm1_id": "region",
                     "adm2_id": "district", "stratum": "urb", "weight": "wt"}})"));
  auto data = load_survey({hh, members, cons}, schema);
  CHECK(data.household(0).members.size() == 2);
  CHECK(data.household(0).members[1].sex == Sex::male);
  CHECK(data.household(1).members[0].sex == Sex::female);
  CHECK_FALSE(data.household(0).zero_consumption);
  CHECK(data.household(1).zero_consumption);
  CHECK(data.household(0).stratum == Stratum::urban);

  CHECK_THROWS_AS(SurveySchema::from_json(nlohmann::json::parse(R"({"households": {"colour": "x"}})")),
                  Error);

  auto lonely = dir.write("mem2.csv", "household_id,age_years,sex\nh1,30,female\n");
  CHECK_THROWS_AS(load_survey({hh, lonely, cons}, schema), Error);
}

TEST_CASE("urban shares: greedy threshold fixture") {
  std::vector<GriddedPopulationCell> cells{
      {"a", "R1", "D1", 60, 66},
      {"b", "R1", "D2", 30, 33},
      {"c", "R1", "D2", 10, 11},
  };
  auto s = derive_urban_shares(cells, {{"R1", 0.6}});
  CHECK(s.cell_urban.at("a"));
  CHECK_FALSE(s.cell_urban.at("b"));
  CHECK_FALSE(s.cell_urban.at("c"));
  CHECK(s.survey_year.at("D1") == 1.0);
  CHECK(s.survey_year.at("D2") == 0.0);

  auto none = derive_urban_shares(cells, {{"R1", 0.0}});
  for (const auto& [id, v] : none.survey_year) CHECK(v == 0.0);
  auto all = derive_urban_shares(cells, {{"R1", 1.0}});
  for (const auto& [id, v] : all.survey_year) CHECK(v == 1.0);

  CHECK_THROWS_AS(derive_urban_shares(cells, {{"R1", 1.2}}), Error);
  CHECK_THROWS_AS(derive_urban_shares(cells, {}), Error);
  std::vector<GriddedPopulationCell> empty{{"z", "R2", "D9", 0, 0}};
  CHECK_THROWS_AS(derive_urban_shares(empty, {{"R2", 0.5}}), Error);
}

TEST_CASE("urban shares reproduce the ADM1 fraction within one cell") {
  KeyedStream rng{8};
  for (int t = 0; t < 50; ++t) {
    std::vector<GriddedPopulationCell> cells;
    for (int i = 0; i < 40; ++i) {
      const double pop = std::floor(rng.uniform(1, 500));
      cells.push_back({"c" + std::to_string(i), "R", "D" + std::to_string(i % 5), pop, pop});
    }
    const double f = rng.uniform();
    auto s = derive_urban_shares(cells, {{"R", f}});
    double total = 0, urban = 0, biggest = 0;
    std::map<std::string, double> pop;
    for (const auto& c : cells) {
      total += c.pop_census;
      pop[c.adm2_id] += c.pop_census;
      biggest = std::max(biggest, c.pop_census);
    }
    for (const auto& [d, share] : s.census_year) {
      CHECK(share >= 0.0);
      CHECK(share <= 1.0);
      urban += share * pop[d];
    }
    CHECK(urban >= f * total - 1e-9);
    CHECK(urban - f * total <= biggest + 1e-9);
  }
}

TEST_CASE("auxiliary tables") {
  testutil::TempDir dir;
  auto areas = load_areas(dir.write("areas.csv",
                                    "adm2_id,adm1_id,population,urban_proportion\n"
                                    "D1,R1,100,0.25\nD2,R1,300,\n"));
  CHECK(areas.at("D1").urban_proportion == 0.25);
  CHECK_FALSE(areas.at("D2").urban_proportion.has_value());
  CHECK(areas.find("D3") == nullptr);
  std::ostringstream out;
  write_areas(out, areas);
  CHECK(out.str() == "adm2_id,adm1_id,population,urban_proportion\nD1,R1,100,0.25\nD2,R1,300,\n");
  CHECK_THROWS_AS(load_areas(dir.write("bad.csv",
                                       "adm2_id,adm1_id,population\nD1,R1,-1\n")),
                  Error);

  auto req = load_requirements(dir.write("req.csv",
                                         "sex,age_low,age_high,kcal_per_day\n"
                                         "female,0,18,1800\nfemale,18,inf,2000\n"
                                         "male,0,18,2000\nmale,18,inf,2500\n"),
                               2000);
  CHECK(req.requirement(30, Sex::female) == 2000);
  CHECK(req.requirement(18, Sex::male) == 2500);
  CHECK(req.requirement(17.9, Sex::male) == 2000);
  CHECK_THROWS_AS(load_requirements(dir.write("gap.csv",
                                              "sex,age_low,age_high,kcal_per_day\n"
                                              "female,0,10,1\nfemale,12,inf,1\n"
                                              "male,0,inf,1\n"),
                                    1),
                  Error);

  auto comp = load_composition(dir.write("comp.csv",
                                         "food_item_id,edible_portion,folate,iron\n"
                                         "maize,1,20,2.5\nbanana,0.6,14,0.3\n"));
  CHECK(comp.find("banana")->edible_portion == 0.6);
  CHECK(comp.find("maize")->nutrient_per_100g.at("iron") == 2.5);
  CHECK_THROWS_AS(load_composition(dir.write("c2.csv",
                                             "food_item_id,edible_portion,iron\nx,1.5,1\n")),
                  Error);

  auto conv = load_unit_conversions(dir.write("units.csv",
                                              "unit,food_item_id,grams_per_unit\n"
                                              "heap,*,250\nheap,banana,120\n"));
  CHECK(conv.grams_per_unit("heap", "maize") == 250);
  CHECK(conv.grams_per_unit("heap", "banana") == 120);
  CHECK_FALSE(conv.grams_per_unit("tin", "maize").has_value());

  auto cells = load_cells(dir.write("cells.csv",
                                    "cell_id,adm1_id,adm2_id,pop_census,pop_survey_year\n"
                                    "a,R1,D1,60,66\n"));
  CHECK(cells.size() == 1);
  auto fr = load_adm1_urban_fractions(dir.write("fr.csv", "adm1_id,urban_fraction\nR1,0.6\n"));
  CHECK(fr.at("R1") == 0.6);
}

TEST_CASE("csv parsing") {
  auto t = csv::parse("\xEF\xBB\xBF" "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n1,NA\n");
  CHECK(t.header()[0] == "a");
  CHECK(t.cell(0, 0) == "x,y");
  CHECK(t.cell(0, 1) == "say \"hi\"");
  CHECK_FALSE(t.optional_number(1, 1).has_value());
  CHECK_THROWS_AS(csv::parse("a,b\n1\n"), Error);
  CHECK_THROWS_AS(t.number(0, 0), Error);
  CHECK(csv::format_number(0.1) == "0.1");
  CHECK(csv::format_number(std::nan("")) == "NA");
}
