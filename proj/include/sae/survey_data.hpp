#pragma once

// Canonical data model for household consumption survey extracts and the
// auxiliary tables the estimators need (food composition, energy
// requirements, area populations, gridded population, adjacency).
//
// All identifiers are opaque strings. Datasets are validated on load and
// immutable afterwards.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace sae::survey {

enum class Stratum { rural, urban };
enum class Sex { female, male };

const char* to_string(Stratum s);
const char* to_string(Sex s);
Stratum parse_stratum(const std::string& text);
Sex parse_sex(const std::string& text);

struct Member {
  double age_years = 0.0;
  Sex sex = Sex::female;
};

struct Unit {
  enum class Kind { gram, kilogram, nonstandard };
  Kind kind = Kind::gram;
  std::string code;  // set for nonstandard units

  static Unit parse(const std::string& text);
  std::string str() const;
};

struct ConsumptionLine {
  std::string food_item_id;
  double reported_quantity = 0.0;
  Unit unit;
  int recall_days = 7;
};

struct HouseholdRecord {
  std::string household_id;
  std::string cluster_id;
  std::string adm1_id;
  std::string adm2_id;
  Stratum stratum = Stratum::rural;
  double weight = 1.0;
  std::vector<Member> members;
  std::vector<ConsumptionLine> consumption_lines;
  // Set when no consumption line reports a positive quantity.
  bool zero_consumption = false;
};

struct Cluster {
  std::string cluster_id;
  std::string adm1_id;
  std::string adm2_id;
  Stratum stratum = Stratum::rural;
  std::vector<std::size_t> households;  // indices into SurveyDataset
  double total_weight = 0.0;
};

class SurveyDataset {
 public:
  SurveyDataset() = default;
  // Links households into clusters and checks referential invariants.
  explicit SurveyDataset(std::vector<HouseholdRecord> households);

  std::span<const HouseholdRecord> households() const { return households_; }
  std::span<const Cluster> clusters() const { return clusters_; }
  const HouseholdRecord& household(std::size_t i) const {
    return households_[i];
  }
  std::optional<std::size_t> find_household(const std::string& id) const;

  // ADM2 ids in first-appearance order, and their ADM1.
  const std::vector<std::string>& adm2_ids() const { return adm2_ids_; }
  const std::vector<std::string>& adm1_ids() const { return adm1_ids_; }
  const std::string& adm1_of(const std::string& adm2) const;

  // Keeps the listed clusters (by index) and every household in them.
  SurveyDataset subset(std::span<const std::size_t> cluster_indices) const;

 private:
  std::vector<HouseholdRecord> households_;
  std::vector<Cluster> clusters_;
  std::unordered_map<std::string, std::size_t> household_index_;
  std::vector<std::string> adm2_ids_;
  std::vector<std::string> adm1_ids_;
  std::unordered_map<std::string, std::string> adm2_to_adm1_;
};

// Column-name mapping for the three household-level files. Defaults are the
// canonical names documented in docs/formats.md.
struct SurveySchema {
  std::map<std::string, std::string> households{
      {"household_id", "household_id"}, {"cluster_id", "cluster_id"},
      {"adm1_id", "adm1_id"},           {"adm2_id", "adm2_id"},
      {"stratum", "stratum"},           {"weight", "weight"},
  };
  std::map<std::string, std::string> members{
      {"household_id", "household_id"},
      {"age_years", "age_years"},
      {"sex", "sex"},
  };
  std::map<std::string, std::string> consumption{
      {"household_id", "household_id"}, {"food_item_id", "food_item_id"},
      {"quantity", "quantity"},         {"unit", "unit"},
      {"recall_days", "recall_days"},
  };

  // Overrides from {"households": {...}, "members": {...}, "consumption":
  // {...}}; unknown logical fields are rejected.
  static SurveySchema from_json(const nlohmann::json& j);
};

struct SurveyFiles {
  std::filesystem::path households;
  std::optional<std::filesystem::path> members;
  std::optional<std::filesystem::path> consumption;
};

SurveyDataset load_survey(const SurveyFiles& files,
                          const SurveySchema& schema = {});

void write_households(std::ostream& out, const SurveyDataset& data);

struct FoodCompositionEntry {
  std::string food_item_id;
  std::map<std::string, double> nutrient_per_100g;
  double edible_portion = 1.0;
};

class FoodComposition {
 public:
  FoodComposition() = default;
  explicit FoodComposition(std::vector<FoodCompositionEntry> entries);

  const FoodCompositionEntry* find(const std::string& item) const;
  std::span<const FoodCompositionEntry> entries() const { return entries_; }

 private:
  std::vector<FoodCompositionEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Wide layout: food_item_id, edible_portion, then one column per nutrient.
FoodComposition load_composition(const std::filesystem::path& path);

// Grams per nonstandard unit; an item-specific factor wins over the
// unit-wide factor (food_item_id "*").
class UnitConversionTable {
 public:
  void add(const std::string& unit_code, const std::string& food_item_id,
           double grams_per_unit);
  std::optional<double> grams_per_unit(const std::string& unit_code,
                                       const std::string& food_item_id) const;

 private:
  std::map<std::pair<std::string, std::string>, double> factors_;
};

UnitConversionTable load_unit_conversions(const std::filesystem::path& path);

struct RequirementBand {
  Sex sex = Sex::female;
  double age_low = 0.0;
  double age_high = 0.0;  // exclusive; may be +inf
  double requirement = 0.0;  // kcal/day
};

class EnergyRequirementTable {
 public:
  EnergyRequirementTable(std::vector<RequirementBand> bands,
                         double reference_requirement);

  std::optional<double> requirement(double age_years, Sex sex) const;
  double reference_requirement() const { return reference_; }

 private:
  std::vector<RequirementBand> bands_;
  double reference_;
};

EnergyRequirementTable load_requirements(const std::filesystem::path& path,
                                         double reference_requirement);

struct AreaInfo {
  std::string adm1_id;
  double population = 0.0;
  std::optional<double> urban_proportion;
};

class AreaTable {
 public:
  void add(const std::string& adm2_id, AreaInfo info);
  const AreaInfo* find(const std::string& adm2_id) const;
  const AreaInfo& at(const std::string& adm2_id) const;
  const std::vector<std::string>& adm2_ids() const { return order_; }
  // Throws a consistency error listing survey areas absent from the table
  // or mapped to a different ADM1.
  void check_covers(const SurveyDataset& data) const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, AreaInfo> areas_;
};

AreaTable load_areas(const std::filesystem::path& path);
void write_areas(std::ostream& out, const AreaTable& areas);

struct GriddedPopulationCell {
  std::string cell_id;
  std::string adm1_id;
  std::string adm2_id;
  double pop_census = 0.0;
  double pop_survey_year = 0.0;
};

std::vector<GriddedPopulationCell> load_cells(
    const std::filesystem::path& path);
std::map<std::string, double> load_adm1_urban_fractions(
    const std::filesystem::path& path);

struct UrbanShares {
  std::map<std::string, double> survey_year;  // used as q_l downstream
  std::map<std::string, double> census_year;
  std::map<std::string, bool> cell_urban;
};

// Within each ADM1, cells are ranked by descending census population and the
// shortest prefix whose cumulative population reaches the ADM1 urban
// fraction is labelled urban. ADM2 shares are urban / total population.
UrbanShares derive_urban_shares(
    std::span<const GriddedPopulationCell> cells,
    const std::map<std::string, double>& adm1_urban_fraction);

}  // namespace sae::survey
