#include "sae/indicators.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "sae/csv.hpp"
#include "sae/error.hpp"

namespace sae::indicators {

namespace {

constexpr const char* kModule = "indicators";

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

}  // namespace

ProbabilityCurve::ProbabilityCurve(std::vector<double> intake,
                                   std::vector<double> probability)
    : x_(std::move(intake)), p_(std::move(probability)) {
  if (x_.empty() || x_.size() != p_.size())
    throw error(ErrorKind::validation,
                "probability curve needs matching, non-empty knot lists");
  for (std::size_t i = 0; i < x_.size(); ++i) {
    if (!(p_[i] >= 0.0 && p_[i] <= 1.0))
      throw error(ErrorKind::validation, "curve probability outside [0,1]");
    if (i > 0 && !(x_[i] > x_[i - 1]))
      throw error(ErrorKind::validation, "curve intake knots must increase");
    if (i > 0 && p_[i] > p_[i - 1])
      throw error(ErrorKind::validation,
                  "curve must be non-increasing in intake");
  }
}

double ProbabilityCurve::operator()(double intake) const {
  if (intake <= x_.front()) return p_.front();
  if (intake >= x_.back()) return p_.back();
  auto it = std::upper_bound(x_.begin(), x_.end(), intake);
  std::size_t hi = static_cast<std::size_t>(it - x_.begin());
  std::size_t lo = hi - 1;
  double t = (intake - x_[lo]) / (x_[hi] - x_[lo]);
  return p_[lo] + t * (p_[hi] - p_[lo]);
}

InadequacyRule threshold_rule(std::string nutrient, double h_ar) {
  if (!(h_ar > 0.0))
    throw error(ErrorKind::validation, "H-AR for '" + nutrient + "' must be positive");
  return {std::move(nutrient), ThresholdRule{h_ar}};
}

InadequacyRule probability_rule(std::string nutrient, ProbabilityCurve curve,
                                double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0))
    throw error(ErrorKind::validation, "cutoff must lie in (0,1)");
  return {std::move(nutrient), ProbabilityRule{std::move(curve), cutoff}};
}

double afe(std::span<const survey::Member> members,
           const survey::EnergyRequirementTable& table) {
  double total = 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    auto r = table.requirement(members[j].age_years, members[j].sex);
    if (!r)
      throw error(ErrorKind::lookup,
                  "no energy requirement for member " + std::to_string(j) +
                      " (" + survey::to_string(members[j].sex) + ", age " +
                      csv::format_number(members[j].age_years) + ")");
    total += *r;
  }
  return total / table.reference_requirement();
}

std::map<std::string, double> daily_quantities(
    std::span<const survey::ConsumptionLine> lines,
    const survey::UnitConversionTable& conversions,
    const survey::FoodComposition& composition) {
  std::map<std::string, double> out;
  for (const auto& line : lines) {
    double grams = 0.0;
    switch (line.unit.kind) {
      case survey::Unit::Kind::gram:
        grams = line.reported_quantity;
        break;
      case survey::Unit::Kind::kilogram:
        grams = line.reported_quantity * 1000.0;
        break;
      case survey::Unit::Kind::nonstandard: {
        auto factor = conversions.grams_per_unit(line.unit.code, line.food_item_id);
        if (!factor)
          throw error(ErrorKind::lookup, "no conversion factor for unit '" +
                                             line.unit.code + "' (item '" +
                                             line.food_item_id + "')");
        grams = line.reported_quantity * *factor;
        break;
      }
    }
    const auto* entry = composition.find(line.food_item_id);
    double edible = entry ? entry->edible_portion : 1.0;
    out[line.food_item_id] += grams * edible / line.recall_days;
  }
  return out;
}

double apparent_intake(const std::map<std::string, double>& quantities,
                       const survey::FoodComposition& composition, double afe,
                       const std::string& nutrient) {
  if (!(afe > 0.0)) throw error(ErrorKind::domain, "AFE must be positive");
  double total = 0.0;
  std::string missing;
  for (const auto& [item, grams_per_day] : quantities) {
    const auto* entry = composition.find(item);
    if (!entry) {
      missing += (missing.empty() ? "" : ", ") + item;
      continue;
    }
    auto it = entry->nutrient_per_100g.find(nutrient);
    double per_100g = it == entry->nutrient_per_100g.end() ? 0.0 : it->second;
    total += grams_per_day * per_100g / 100.0;
  }
  if (!missing.empty())
    throw error(ErrorKind::lookup, "food items missing from composition table: " + missing);
  return total / afe;
}

bool classify_inadequate(const ApparentIntake& intake,
                         const InadequacyRule& rule) {
  if (intake.nutrient != rule.nutrient)
    throw error(ErrorKind::misuse, "rule for '" + rule.nutrient +
                                       "' applied to '" + intake.nutrient + "'");
  if (const auto* t = std::get_if<ThresholdRule>(&rule.kind))
    return intake.intake < t->h_ar;
  const auto& p = std::get<ProbabilityRule>(rule.kind);
  return p.curve(intake.intake) > p.cutoff;
}

IndicatorConfig load_indicator_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error(ErrorKind::io, "cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
    IndicatorConfig cfg;
    cfg.reference_requirement = j.at("reference_requirement_kcal").get<double>();
    for (const auto& r : j.at("rules")) {
      std::string nutrient = r.at("nutrient").get<std::string>();
      std::string kind = r.at("kind").get<std::string>();
      if (kind == "threshold") {
        cfg.rules.push_back(threshold_rule(nutrient, r.at("h_ar").get<double>()));
      } else if (kind == "probability") {
        ProbabilityCurve curve(r.at("intake").get<std::vector<double>>(),
                               r.at("probability").get<std::vector<double>>());
        cfg.rules.push_back(probability_rule(nutrient, std::move(curve),
                                             r.value("cutoff", 0.5)));
      } else {
        throw error(ErrorKind::schema, "unknown rule kind '" + kind + "'");
      }
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw error(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

std::vector<IndicatorRow> compute_indicators(
    const survey::SurveyDataset& data,
    const survey::FoodComposition& composition,
    const survey::UnitConversionTable& conversions,
    const survey::EnergyRequirementTable& requirements,
    std::span<const InadequacyRule> rules) {
  std::vector<IndicatorRow> rows;
  rows.reserve(data.households().size() * rules.size());
  for (const auto& h : data.households()) {
    if (h.members.empty())
      throw error(ErrorKind::misuse, "household '" + h.household_id +
                                         "' has no members loaded");
    double household_afe;
    std::map<std::string, double> quantities;
    try {
      household_afe = afe(h.members, requirements);
      quantities = daily_quantities(h.consumption_lines, conversions, composition);
    } catch (const Error& e) {
      throw Error(e.kind(), kModule, "household '" + h.household_id + "': " + e.what());
    }
    for (const auto& rule : rules) {
      ApparentIntake intake{h.household_id, rule.nutrient,
                            apparent_intake(quantities, composition,
                                            household_afe, rule.nutrient),
                            household_afe};
      rows.push_back({h.household_id, rule.nutrient,
                      classify_inadequate(intake, rule) ? 1 : 0, intake.intake,
                      household_afe, h.zero_consumption});
    }
  }
  return rows;
}

void write_indicators(std::ostream& out, std::span<const IndicatorRow> rows) {
  csv::Writer w(out);
  w.row({"household_id", "nutrient", "y", "intake", "afe", "zero_consumption"});
  for (const auto& r : rows) {
    w.field(r.household_id).field(r.nutrient).field(r.inadequate)
        .field(r.intake).field(r.afe).field(r.zero_consumption ? 1 : 0);
    w.end_row();
  }
}

std::vector<double> indicator_column(const survey::SurveyDataset& data,
                                     const std::filesystem::path& path,
                                     const std::string& nutrient) {
  csv::Table t = csv::read(path);
  const std::size_t c_id = t.column("household_id"), c_nut = t.column("nutrient"),
                    c_y = t.column("y");
  std::vector<double> y(data.households().size(), -1.0);
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    if (t.cell(r, c_nut) != nutrient) continue;
    auto idx = data.find_household(t.cell(r, c_id));
    if (!idx)
      throw error(ErrorKind::lookup, t.source() + ": unknown household '" +
                                         t.cell(r, c_id) + "'");
    double v = t.number(r, c_y);
    if (v != 0.0 && v != 1.0)
      throw error(ErrorKind::validation, "indicator must be 0 or 1 for household '" +
                                             t.cell(r, c_id) + "'");
    y[*idx] = v;
  }
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0)
      throw error(ErrorKind::lookup, "no '" + nutrient + "' indicator for household '" +
                                         data.household(i).household_id + "'");
  return y;
}

}  // namespace sae::indicators
