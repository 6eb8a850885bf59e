#pragma once

// Nutrient supply model: household consumption -> apparent intake per adult
// female equivalent -> binary inadequacy indicator.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sae/survey_data.hpp"

namespace sae::indicators {

struct ApparentIntake {
  std::string household_id;
  std::string nutrient;
  double intake = 0.0;  // nutrient units per day per AFE
  double afe = 1.0;
};

// Piecewise-linear probability of inadequacy as a function of intake, flat
// beyond the first and last knots.
class ProbabilityCurve {
 public:
  ProbabilityCurve(std::vector<double> intake, std::vector<double> probability);
  double operator()(double intake) const;

 private:
  std::vector<double> x_;
  std::vector<double> p_;
};

struct ThresholdRule {
  double h_ar = 0.0;
};

struct ProbabilityRule {
  ProbabilityCurve curve;
  double cutoff = 0.5;
};

struct InadequacyRule {
  std::string nutrient;
  std::variant<ThresholdRule, ProbabilityRule> kind;
};

InadequacyRule threshold_rule(std::string nutrient, double h_ar);
InadequacyRule probability_rule(std::string nutrient, ProbabilityCurve curve,
                                double cutoff = 0.5);

double afe(std::span<const survey::Member> members,
           const survey::EnergyRequirementTable& table);

// Grams per day of each consumed item, after unit conversion and
// edible-portion adjustment.
std::map<std::string, double> daily_quantities(
    std::span<const survey::ConsumptionLine> lines,
    const survey::UnitConversionTable& conversions,
    const survey::FoodComposition& composition);

double apparent_intake(const std::map<std::string, double>& quantities,
                       const survey::FoodComposition& composition, double afe,
                       const std::string& nutrient);

bool classify_inadequate(const ApparentIntake& intake,
                         const InadequacyRule& rule);

struct IndicatorConfig {
  double reference_requirement = 0.0;  // kcal/day for the reference adult
  std::vector<InadequacyRule> rules;
};

// JSON: {"reference_requirement_kcal": r, "rules": [{"nutrient": n,
//   "kind": "threshold", "h_ar": v} | {"nutrient": n, "kind": "probability",
//   "intake": [...], "probability": [...], "cutoff": 0.5}]}
IndicatorConfig load_indicator_config(const std::filesystem::path& path);

struct IndicatorRow {
  std::string household_id;
  std::string nutrient;
  int inadequate = 0;
  double intake = 0.0;
  double afe = 0.0;
  bool zero_consumption = false;
};

std::vector<IndicatorRow> compute_indicators(
    const survey::SurveyDataset& data,
    const survey::FoodComposition& composition,
    const survey::UnitConversionTable& conversions,
    const survey::EnergyRequirementTable& requirements,
    std::span<const InadequacyRule> rules);

void write_indicators(std::ostream& out, std::span<const IndicatorRow> rows);

// Binary indicator per household (dataset order) for one nutrient, read from
// an indicator table. Households absent from the table raise a lookup error.
std::vector<double> indicator_column(const survey::SurveyDataset& data,
                                     const std::filesystem::path& path,
                                     const std::string& nutrient);

}  // namespace sae::indicators
