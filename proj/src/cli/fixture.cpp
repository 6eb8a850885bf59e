#include <cmath>
#include <fstream>
#include <limits>

#include "sae/cli.hpp"
#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/rng.hpp"

namespace sae::cli {

namespace {

// Energy requirement bands (kcal/day) and the reference adult female.
struct Band {
  const char* sex;
  double low, high, kcal;
};
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr Band kBands[] = {
    {"female", 0, 5, 1000}, {"female", 5, 15, 1700}, {"female", 15, kInf, 2100},
    {"male", 0, 5, 1100},   {"male", 5, 15, 1900},   {"male", 15, kInf, 2600},
};
constexpr double kReference = 2100.0;
constexpr double kHar = 2100.0;  // kcal per AFE per day

constexpr double kMaizeKcal = 362.0;
constexpr double kBeansKcal = 341.0;
constexpr double kBeansEdible = 0.95;
constexpr double kCupGrams = 180.0;

double requirement(double age, bool male) {
  for (const auto& b : kBands)
    if ((std::string(b.sex) == "male") == male && age >= b.low && age < b.high) return b.kcal;
  return kReference;
}

// Divide by an exact power of ten so the printed value is short.
double round_to(double x, double scale) { return std::round(x * scale) / scale; }

std::ofstream open(const std::filesystem::path& dir, const std::string& name) {
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cli", "cannot write '" + (dir / name).string() + "'");
  return out;
}

}  // namespace

std::vector<std::string> write_fixture(const simulation::SyntheticConfig& config,
                                       const std::filesystem::path& dir) {
  const auto pop = simulation::synthesize(config, 0);
  std::filesystem::create_directories(dir);
  KeyedStream rng{config.seed, 0, 99};

  {
    auto f = open(dir, "households.csv");
    csv::Writer w(f);
    w.row({"household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight"});
    for (const auto& h : pop.survey.households()) {
      w.field(h.household_id).field(h.cluster_id).field(h.adm1_id).field(h.adm2_id)
          .field(survey::to_string(h.stratum)).field(round_to(h.weight, 1e4));
      w.end_row();
    }
  }

  auto members = open(dir, "members.csv");
  auto consumption = open(dir, "consumption.csv");
  csv::Writer wm(members), wc(consumption);
  wm.row({"household_id", "age_years", "sex"});
  wc.row({"household_id", "food_item_id", "quantity", "unit", "recall_days"});
  const auto households = pop.survey.households();
  for (std::size_t i = 0; i < households.size(); ++i) {
    const auto& id = households[i].household_id;
    const int size = 1 + static_cast<int>(rng.uniform() * 6);
    double total_kcal = 0.0;
    for (int m = 0; m < size; ++m) {
      // First member is an adult woman so every household has positive AFE.
      const bool male = m > 0 && rng.uniform() < 0.5;
      const double age = m == 0 ? std::floor(rng.uniform(18, 60)) : std::floor(rng.uniform(0, 70));
      total_kcal += requirement(age, male);
      wm.field(id).field(age).field(male ? "male" : "female");
      wm.end_row();
    }
    const double afe = total_kcal / kReference;
    // Keep intake well away from the threshold so rounding never flips it.
    const double per_afe = pop.y[i] > 0.5 ? rng.uniform(0.55, 0.92) * kHar
                                          : rng.uniform(1.08, 1.8) * kHar;
    const double energy = per_afe * afe;
    const double maize_share = rng.uniform(0.5, 0.9);
    const double maize_g = energy * maize_share / (kMaizeKcal / 100.0);
    const double beans_g = energy * (1.0 - maize_share) / (kBeansKcal / 100.0) / kBeansEdible;
    wc.field(id).field("maize").field(round_to(maize_g * 7.0 / 1000.0, 1e4)).field("kg").field(7);
    wc.end_row();
    wc.field(id).field("beans").field(round_to(beans_g * 7.0 / kCupGrams, 1e3)).field("cup").field(7);
    wc.end_row();
  }

  {
    auto f = open(dir, "composition.csv");
    f << "food_item_id,edible_portion,energy_kcal\n"
      << "maize,1," << kMaizeKcal << "\n"
      << "beans," << kBeansEdible << "," << kBeansKcal << "\n";
  }
  {
    auto f = open(dir, "units.csv");
    f << "unit,food_item_id,grams_per_unit\ncup,*," << kCupGrams << "\n";
  }
  {
    auto f = open(dir, "requirements.csv");
    f << "sex,age_low,age_high,kcal_per_day\n";
    for (const auto& b : kBands)
      f << b.sex << "," << b.low << "," << (std::isinf(b.high) ? std::string("inf") : csv::format_number(b.high))
        << "," << b.kcal << "\n";
  }
  {
    auto f = open(dir, "indicator_config.json");
    nlohmann::json j{{"reference_requirement_kcal", kReference},
                     {"rules", {{{"nutrient", "energy_kcal"}, {"kind", "threshold"}, {"h_ar", kHar}}}}};
    f << j.dump(2) << "\n";
  }
  {
    auto f = open(dir, "areas.csv");
    survey::AreaTable rounded;
    for (const auto& id : pop.areas.adm2_ids()) {
      auto info = pop.areas.at(id);
      info.population = round_to(info.population, 1e2);
      rounded.add(id, info);
    }
    survey::write_areas(f, rounded);
  }
  {
    auto f = open(dir, "adjacency.txt");
    spatial::write_adjacency(f, pop.graph);
  }
  {
    auto f = open(dir, "truth.csv");
    csv::Writer w(f);
    w.row({"area_id", "value"});
    for (const auto& t : pop.truth) {
      w.field(t.area_id).field(t.value);
      w.end_row();
    }
  }
  return {"households.csv", "members.csv", "consumption.csv", "composition.csv", "units.csv",
          "requirements.csv", "indicator_config.json", "areas.csv", "adjacency.txt", "truth.csv"};
}

}  // namespace sae::cli
