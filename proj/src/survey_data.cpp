#include "sae/survey_data.hpp"

#include <array>
#include <cctype>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "sae/csv.hpp"
#include "sae/error.hpp"

namespace sae::survey {

namespace {

constexpr const char* kModule = "survey-data";

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct MappedColumns {
  const csv::Table& table;
  const std::map<std::string, std::string>& mapping;

  std::size_t operator[](const std::string& logical) const {
    auto it = mapping.find(logical);
    const std::string& name = it == mapping.end() ? logical : it->second;
    return table.column(name);
  }
};

}  // namespace

const char* to_string(Stratum s) { return s == Stratum::urban ? "urban" : "rural"; }
const char* to_string(Sex s) { return s == Sex::female ? "female" : "male"; }

Stratum parse_stratum(const std::string& text) {
  std::string t = lower(text);
  if (t == "urban" || t == "u" || t == "1") return Stratum::urban;
  if (t == "rural" || t == "r" || t == "0" || t == "2") return Stratum::rural;
  throw error(ErrorKind::validation, "unknown stratum '" + text + "'");
}

Sex parse_sex(const std::string& text) {
  std::string t = lower(text);
  if (t == "female" || t == "f" || t == "2") return Sex::female;
  if (t == "male" || t == "m" || t == "1") return Sex::male;
  throw error(ErrorKind::validation, "unknown sex '" + text + "'");
}

Unit Unit::parse(const std::string& text) {
  std::string t = lower(text);
  if (t == "g" || t == "gram" || t == "grams") return {Kind::gram, {}};
  if (t == "kg" || t == "kilogram" || t == "kilograms")
    return {Kind::kilogram, {}};
  if (text.empty()) throw error(ErrorKind::validation, "empty unit code");
  return {Kind::nonstandard, text};
}

std::string Unit::str() const {
  switch (kind) {
    case Kind::gram: return "g";
    case Kind::kilogram: return "kg";
    case Kind::nonstandard: return code;
  }
  return code;
}

SurveyDataset::SurveyDataset(std::vector<HouseholdRecord> households)
    : households_(std::move(households)) {
  std::unordered_map<std::string, std::size_t> cluster_index;
  for (std::size_t i = 0; i < households_.size(); ++i) {
    auto& h = households_[i];
    if (!(h.weight > 0.0) || !std::isfinite(h.weight))
      throw error(ErrorKind::validation,
                  "household '" + h.household_id +
                      "' has non-positive weight " + csv::format_number(h.weight));
    if (!household_index_.emplace(h.household_id, i).second)
      throw error(ErrorKind::consistency,
                  "duplicate household_id '" + h.household_id + "'");

    auto [a_it, a_new] = adm2_to_adm1_.emplace(h.adm2_id, h.adm1_id);
    if (a_new) {
      adm2_ids_.push_back(h.adm2_id);
      if (std::find(adm1_ids_.begin(), adm1_ids_.end(), h.adm1_id) ==
          adm1_ids_.end())
        adm1_ids_.push_back(h.adm1_id);
    } else if (a_it->second != h.adm1_id) {
      throw error(ErrorKind::consistency,
                  "ADM2 '" + h.adm2_id + "' appears under ADM1 areas '" +
                      a_it->second + "' and '" + h.adm1_id + "'");
    }

    auto [c_it, c_new] = cluster_index.emplace(h.cluster_id, clusters_.size());
    if (c_new) {
      clusters_.push_back(
          Cluster{h.cluster_id, h.adm1_id, h.adm2_id, h.stratum, {}, 0.0});
    }
    Cluster& c = clusters_[c_it->second];
    if (c.adm2_id != h.adm2_id)
      throw error(ErrorKind::consistency,
                  "cluster '" + c.cluster_id + "' spans ADM2 areas '" +
                      c.adm2_id + "' and '" + h.adm2_id + "'");
    if (c.stratum != h.stratum)
      throw error(ErrorKind::consistency,
                  "cluster '" + c.cluster_id + "' spans both strata");
    c.households.push_back(i);
    c.total_weight += h.weight;
  }
}

std::optional<std::size_t> SurveyDataset::find_household(
    const std::string& id) const {
  auto it = household_index_.find(id);
  if (it == household_index_.end()) return std::nullopt;
  return it->second;
}

const std::string& SurveyDataset::adm1_of(const std::string& adm2) const {
  auto it = adm2_to_adm1_.find(adm2);
  if (it == adm2_to_adm1_.end())
    throw error(ErrorKind::lookup, "unknown ADM2 '" + adm2 + "'");
  return it->second;
}

SurveyDataset SurveyDataset::subset(
    std::span<const std::size_t> cluster_indices) const {
  std::vector<HouseholdRecord> kept;
  for (std::size_t ci : cluster_indices)
    for (std::size_t hi : clusters_.at(ci).households)
      kept.push_back(households_[hi]);
  return SurveyDataset(std::move(kept));
}

SurveySchema SurveySchema::from_json(const nlohmann::json& j) {
  SurveySchema schema;
  auto apply = [&](const char* key, std::map<std::string, std::string>& target) {
    if (!j.contains(key)) return;
    for (const auto& [field, column] : j.at(key).items()) {
      if (!target.contains(field))
        throw error(ErrorKind::schema, std::string("schema section '") + key +
                                           "' has unknown field '" + field + "'");
      target[field] = column.get<std::string>();
    }
  };
  apply("households", schema.households);
  apply("members", schema.members);
  apply("consumption", schema.consumption);
  return schema;
}

SurveyDataset load_survey(const SurveyFiles& files, const SurveySchema& schema) {
  csv::Table hh = csv::read(files.households);
  MappedColumns col{hh, schema.households};
  const std::size_t c_id = col["household_id"], c_cluster = col["cluster_id"],
                    c_adm1 = col["adm1_id"], c_adm2 = col["adm2_id"],
                    c_stratum = col["stratum"], c_weight = col["weight"];

  std::vector<HouseholdRecord> records;
  records.reserve(hh.row_count());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < hh.row_count(); ++r) {
    HouseholdRecord h;
    h.household_id = hh.cell(r, c_id);
    h.cluster_id = hh.cell(r, c_cluster);
    h.adm1_id = hh.cell(r, c_adm1);
    h.adm2_id = hh.cell(r, c_adm2);
    h.stratum = parse_stratum(hh.cell(r, c_stratum));
    h.weight = hh.number(r, c_weight);
    if (!(h.weight > 0.0))
      throw error(ErrorKind::validation, "household '" + h.household_id +
                                             "' has non-positive weight " +
                                             hh.cell(r, c_weight));
    index.emplace(h.household_id, records.size());
    records.push_back(std::move(h));
  }

  auto owner = [&](const csv::Table& t, std::size_t r, std::size_t c) -> HouseholdRecord& {
    auto it = index.find(t.cell(r, c));
    if (it == index.end())
      throw error(ErrorKind::lookup, t.source() + ": row " + std::to_string(r + 2) +
                                         " references unknown household '" +
                                         t.cell(r, c) + "'");
    return records[it->second];
  };

  if (files.members) {
    csv::Table m = csv::read(*files.members);
    MappedColumns mc{m, schema.members};
    const std::size_t m_id = mc["household_id"], m_age = mc["age_years"],
                      m_sex = mc["sex"];
    for (std::size_t r = 0; r < m.row_count(); ++r) {
      Member member{m.number(r, m_age), parse_sex(m.cell(r, m_sex))};
      if (!(member.age_years >= 0.0))
        throw error(ErrorKind::validation,
                    "household '" + m.cell(r, m_id) + "' has a member with negative age");
      owner(m, r, m_id).members.push_back(member);
    }
    for (const auto& h : records)
      if (h.members.empty())
        throw error(ErrorKind::validation,
                    "household '" + h.household_id + "' has no members");
  }

  if (files.consumption) {
    csv::Table c = csv::read(*files.consumption);
    MappedColumns cc{c, schema.consumption};
    const std::size_t k_id = cc["household_id"], k_item = cc["food_item_id"],
                      k_qty = cc["quantity"], k_unit = cc["unit"],
                      k_days = cc["recall_days"];
    for (std::size_t r = 0; r < c.row_count(); ++r) {
      ConsumptionLine line;
      line.food_item_id = c.cell(r, k_item);
      line.reported_quantity = c.number(r, k_qty);
      line.unit = Unit::parse(c.cell(r, k_unit));
      line.recall_days = static_cast<int>(c.integer(r, k_days));
      if (!(line.reported_quantity >= 0.0))
        throw error(ErrorKind::validation,
                    "household '" + c.cell(r, k_id) + "' reports a negative quantity");
      if (line.recall_days <= 0)
        throw error(ErrorKind::validation,
                    "household '" + c.cell(r, k_id) + "' has non-positive recall_days");
      owner(c, r, k_id).consumption_lines.push_back(std::move(line));
    }
    for (auto& h : records)
      h.zero_consumption = std::none_of(
          h.consumption_lines.begin(), h.consumption_lines.end(),
          [](const ConsumptionLine& l) { return l.reported_quantity > 0.0; });
  }

  return SurveyDataset(std::move(records));
}

void write_households(std::ostream& out, const SurveyDataset& data) {
  csv::Writer w(out);
  w.row({"household_id", "cluster_id", "adm1_id", "adm2_id", "stratum",
         "weight", "n_members", "zero_consumption"});
  for (const auto& h : data.households()) {
    w.field(h.household_id).field(h.cluster_id).field(h.adm1_id)
        .field(h.adm2_id).field(to_string(h.stratum)).field(h.weight)
        .field(h.members.size()).field(h.zero_consumption ? 1 : 0);
    w.end_row();
  }
}

FoodComposition::FoodComposition(std::vector<FoodCompositionEntry> entries)
    : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (!(e.edible_portion > 0.0 && e.edible_portion <= 1.0))
      throw error(ErrorKind::validation, "food item '" + e.food_item_id +
                                             "' has edible_portion outside (0,1]");
    for (const auto& [nutrient, value] : e.nutrient_per_100g)
      if (!(value >= 0.0))
        throw error(ErrorKind::validation, "food item '" + e.food_item_id +
                                               "' has negative " + nutrient);
    if (!index_.emplace(e.food_item_id, i).second)
      throw error(ErrorKind::consistency,
                  "duplicate food item '" + e.food_item_id + "'");
  }
}

const FoodCompositionEntry* FoodComposition::find(const std::string& item) const {
  auto it = index_.find(item);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

FoodComposition load_composition(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_id = t.column("food_item_id");
  const std::size_t c_edible = t.column("edible_portion");
  std::vector<FoodCompositionEntry> entries;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    FoodCompositionEntry e;
    e.food_item_id = t.cell(r, c_id);
    e.edible_portion = t.number(r, c_edible);
    for (std::size_t c = 0; c < t.header().size(); ++c) {
      if (c == c_id || c == c_edible) continue;
      e.nutrient_per_100g[t.header()[c]] = t.optional_number(r, c).value_or(0.0);
    }
    entries.push_back(std::move(e));
  }
  return FoodComposition(std::move(entries));
}

void UnitConversionTable::add(const std::string& unit_code,
                              const std::string& food_item_id,
                              double grams_per_unit) {
  if (!(grams_per_unit > 0.0))
    throw error(ErrorKind::validation,
                "unit '" + unit_code + "' has non-positive conversion factor");
  factors_[{unit_code, food_item_id.empty() ? "*" : food_item_id}] = grams_per_unit;
}

std::optional<double> UnitConversionTable::grams_per_unit(
    const std::string& unit_code, const std::string& food_item_id) const {
  if (auto it = factors_.find({unit_code, food_item_id}); it != factors_.end())
    return it->second;
  if (auto it = factors_.find({unit_code, "*"}); it != factors_.end())
    return it->second;
  return std::nullopt;
}

UnitConversionTable load_unit_conversions(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_unit = t.column("unit");
  const std::size_t c_item = t.column("food_item_id");
  const std::size_t c_grams = t.column("grams_per_unit");
  UnitConversionTable table;
  for (std::size_t r = 0; r < t.row_count(); ++r)
    table.add(t.cell(r, c_unit), t.cell(r, c_item), t.number(r, c_grams));
  return table;
}

EnergyRequirementTable::EnergyRequirementTable(std::vector<RequirementBand> bands,
                                               double reference_requirement)
    : bands_(std::move(bands)), reference_(reference_requirement) {
  if (!(reference_ > 0.0))
    throw error(ErrorKind::validation, "reference requirement must be positive");
  for (Sex sex : {Sex::female, Sex::male}) {
    std::vector<const RequirementBand*> rows;
    for (const auto& b : bands_) {
      if (!(b.requirement > 0.0) || !(b.age_high > b.age_low))
        throw error(ErrorKind::validation, "invalid requirement band");
      if (b.sex == sex) rows.push_back(&b);
    }
    std::sort(rows.begin(), rows.end(),
              [](auto* a, auto* b) { return a->age_low < b->age_low; });
    double expected = 0.0;
    for (auto* b : rows) {
      if (b->age_low != expected)
        throw error(ErrorKind::validation,
                    std::string("requirement bands for ") + to_string(sex) +
                        " leave a gap or overlap at age " +
                        csv::format_number(expected));
      expected = b->age_high;
    }
    if (!rows.empty() && !std::isinf(expected))
      throw error(ErrorKind::validation,
                  std::string("requirement bands for ") + to_string(sex) +
                      " end at age " + csv::format_number(expected));
  }
}

std::optional<double> EnergyRequirementTable::requirement(double age_years,
                                                          Sex sex) const {
  for (const auto& b : bands_)
    if (b.sex == sex && age_years >= b.age_low && age_years < b.age_high)
      return b.requirement;
  return std::nullopt;
}

EnergyRequirementTable load_requirements(const std::filesystem::path& path,
                                         double reference_requirement) {
  csv::Table t = csv::read(path);
  const std::size_t c_sex = t.column("sex"), c_low = t.column("age_low"),
                    c_high = t.column("age_high"),
                    c_req = t.column("kcal_per_day");
  std::vector<RequirementBand> bands;
  for (std::size_t r = 0; r < t.row_count(); ++r)
    bands.push_back({parse_sex(t.cell(r, c_sex)), t.number(r, c_low),
                     t.number(r, c_high), t.number(r, c_req)});
  return EnergyRequirementTable(std::move(bands), reference_requirement);
}

void AreaTable::add(const std::string& adm2_id, AreaInfo info) {
  if (!(info.population >= 0.0))
    throw error(ErrorKind::validation,
                "area '" + adm2_id + "' has negative population");
  if (info.urban_proportion &&
      !(*info.urban_proportion >= 0.0 && *info.urban_proportion <= 1.0))
    throw error(ErrorKind::validation,
                "area '" + adm2_id + "' has urban_proportion outside [0,1]");
  if (!areas_.emplace(adm2_id, std::move(info)).second)
    throw error(ErrorKind::consistency, "duplicate area '" + adm2_id + "'");
  order_.push_back(adm2_id);
}

const AreaInfo* AreaTable::find(const std::string& adm2_id) const {
  auto it = areas_.find(adm2_id);
  return it == areas_.end() ? nullptr : &it->second;
}

const AreaInfo& AreaTable::at(const std::string& adm2_id) const {
  if (auto* a = find(adm2_id)) return *a;
  throw error(ErrorKind::lookup, "area '" + adm2_id + "' not in area table");
}

void AreaTable::check_covers(const SurveyDataset& data) const {
  std::string missing;
  for (const auto& adm2 : data.adm2_ids()) {
    const AreaInfo* a = find(adm2);
    if (!a) {
      missing += (missing.empty() ? "" : ", ") + adm2;
    } else if (a->adm1_id != data.adm1_of(adm2)) {
      throw error(ErrorKind::consistency,
                  "area '" + adm2 + "' is under ADM1 '" + a->adm1_id +
                      "' in the area table but '" + data.adm1_of(adm2) +
                      "' in the survey");
    }
  }
  if (!missing.empty())
    throw error(ErrorKind::consistency,
                "survey areas missing from area table: " + missing);
}

AreaTable load_areas(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_adm2 = t.column("adm2_id"), c_adm1 = t.column("adm1_id"),
                    c_pop = t.column("population");
  auto c_urban = t.find_column("urban_proportion");
  AreaTable table;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    AreaInfo info{t.cell(r, c_adm1), t.number(r, c_pop), std::nullopt};
    if (c_urban) info.urban_proportion = t.optional_number(r, *c_urban);
    table.add(t.cell(r, c_adm2), std::move(info));
  }
  return table;
}

void write_areas(std::ostream& out, const AreaTable& areas) {
  csv::Writer w(out);
  w.row({"adm2_id", "adm1_id", "population", "urban_proportion"});
  for (const auto& id : areas.adm2_ids()) {
    const auto& a = areas.at(id);
    w.field(id).field(a.adm1_id).field(a.population);
    if (a.urban_proportion) w.field(*a.urban_proportion); else w.empty();
    w.end_row();
  }
}

std::vector<GriddedPopulationCell> load_cells(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_id = t.column("cell_id"), c_adm1 = t.column("adm1_id"),
                    c_adm2 = t.column("adm2_id"),
                    c_census = t.column("pop_census"),
                    c_survey = t.column("pop_survey_year");
  std::vector<GriddedPopulationCell> cells;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    GriddedPopulationCell c{t.cell(r, c_id), t.cell(r, c_adm1), t.cell(r, c_adm2),
                            t.number(r, c_census), t.number(r, c_survey)};
    if (!(c.pop_census >= 0.0) || !(c.pop_survey_year >= 0.0))
      throw error(ErrorKind::validation, "cell '" + c.cell_id + "' has negative population");
    if (!seen.insert(c.cell_id).second)
      throw error(ErrorKind::consistency, "cell '" + c.cell_id + "' listed twice");
    cells.push_back(std::move(c));
  }
  return cells;
}

std::map<std::string, double> load_adm1_urban_fractions(
    const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_adm1 = t.column("adm1_id"),
                    c_frac = t.column("urban_fraction");
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < t.row_count(); ++r)
    out[t.cell(r, c_adm1)] = t.number(r, c_frac);
  return out;
}

UrbanShares derive_urban_shares(
    std::span<const GriddedPopulationCell> cells,
    const std::map<std::string, double>& adm1_urban_fraction) {
  std::map<std::string, std::vector<std::size_t>> by_adm1;
  std::map<std::string, std::string> adm2_parent;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    auto [it, inserted] = adm2_parent.emplace(c.adm2_id, c.adm1_id);
    if (!inserted && it->second != c.adm1_id)
      throw error(ErrorKind::consistency, "ADM2 '" + c.adm2_id +
                                              "' has cells in two ADM1 areas");
    by_adm1[c.adm1_id].push_back(i);
  }

  UrbanShares out;
  std::vector<bool> urban(cells.size(), false);
  for (auto& [adm1, members] : by_adm1) {
    auto f_it = adm1_urban_fraction.find(adm1);
    if (f_it == adm1_urban_fraction.end())
      throw error(ErrorKind::lookup, "no urban fraction for ADM1 '" + adm1 + "'");
    const double fraction = f_it->second;
    if (!(fraction >= 0.0 && fraction <= 1.0))
      throw error(ErrorKind::domain, "urban fraction for ADM1 '" + adm1 +
                                         "' is outside [0,1]");
    double total = 0.0;
    for (std::size_t i : members) total += cells[i].pop_census;
    if (!(total > 0.0))
      throw error(ErrorKind::domain,
                  "ADM1 '" + adm1 + "' has zero census population");

    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (cells[a].pop_census != cells[b].pop_census)
        return cells[a].pop_census > cells[b].pop_census;
      return cells[a].cell_id < cells[b].cell_id;
    });
    if (fraction >= 1.0) {
      for (std::size_t i : members) urban[i] = true;
      continue;
    }
    const double target = fraction * total;
    double cumulative = 0.0;
    for (std::size_t i : members) {
      if (cumulative >= target) break;
      urban[i] = true;
      cumulative += cells[i].pop_census;
    }
  }

  std::map<std::string, std::array<double, 4>> sums;  // urban/total census, survey
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& s = sums[cells[i].adm2_id];
    s[1] += cells[i].pop_census;
    s[3] += cells[i].pop_survey_year;
    if (urban[i]) {
      s[0] += cells[i].pop_census;
      s[2] += cells[i].pop_survey_year;
    }
    out.cell_urban[cells[i].cell_id] = urban[i];
  }
  for (const auto& [adm2, s] : sums) {
    if (!(s[3] > 0.0))
      throw error(ErrorKind::domain,
                  "ADM2 '" + adm2 + "' has zero survey-year population");
    out.survey_year[adm2] = s[2] / s[3];
    out.census_year[adm2] = s[1] > 0.0 ? s[0] / s[1] : 0.0;
  }
  return out;
}

}  // namespace sae::survey
