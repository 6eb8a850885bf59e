#include "sae/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "sae/csv.hpp"
#include "sae/design.hpp"
#include "sae/error.hpp"
#include "sae/indicators.hpp"
#include "sae/inference.hpp"
#include "sae/models.hpp"
#include "sae/simulation.hpp"
#include "sae/spatial_graph.hpp"
#include "sae/survey_data.hpp"

namespace sae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Error error(ErrorKind kind, const std::string& message) { return Error(kind, "cli", message); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw error(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SAE_OUTPUT_DIR"); env && *env) return env;
  return "sae_output";
}

// Writes one output file and records its hash.
class Outputs {
 public:
  Outputs(fs::path dir, Manifest& manifest) : dir_(std::move(dir)), manifest_(manifest) {
    fs::create_directories(dir_);
  }
  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    {
      std::ofstream out(dir_ / name, std::ios::binary);
      if (!out) throw error(ErrorKind::io, "cannot write '" + (dir_ / name).string() + "'");
      body(out);
    }
    manifest_.output(dir_, name);
  }
  void finish() { manifest_.write(dir_); }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  Manifest& manifest_;
};

// ---------------------------------------------------------------------------
// Options shared across commands

struct SurveyArgs {
  std::string households, members, consumption, schema;

  void add(CLI::App* app, bool need_detail) {
    app->add_option("--households", households, "household file")->required()->check(CLI::ExistingFile);
    auto* m = app->add_option("--members", members, "member file")->check(CLI::ExistingFile);
    auto* c = app->add_option("--consumption", consumption, "consumption file")->check(CLI::ExistingFile);
    if (need_detail) {
      m->required();
      c->required();
    }
    app->add_option("--schema", schema, "JSON column mapping")->check(CLI::ExistingFile);
  }

  survey::SurveyDataset load(Manifest& manifest) const {
    survey::SurveyFiles files{households, std::nullopt, std::nullopt};
    manifest.input("households", households);
    if (!members.empty()) {
      files.members = members;
      manifest.input("members", members);
    }
    if (!consumption.empty()) {
      files.consumption = consumption;
      manifest.input("consumption", consumption);
    }
    survey::SurveySchema s;
    if (!schema.empty()) {
      s = survey::SurveySchema::from_json(read_json(schema));
      manifest.input("schema", schema);
    }
    return survey::load_survey(files, s);
  }
};

struct SamplerArgs {
  std::string file;
  std::optional<int> chains, warmup, samples, max_depth, threads;
  std::optional<double> target_accept;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--sampler", file, "JSON sampler settings")->check(CLI::ExistingFile);
    app->add_option("--chains", chains)->check(CLI::PositiveNumber);
    app->add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
    app->add_option("--samples", samples)->check(CLI::PositiveNumber);
    app->add_option("--max-tree-depth", max_depth)->check(CLI::PositiveNumber);
    app->add_option("--target-accept", target_accept);
    app->add_option("--threads", threads, "worker threads (default SAE_THREADS)");
    app->add_option("--seed", seed);
  }

  inference::SamplerConfig resolve(Manifest& manifest) const {
    inference::SamplerConfig c;
    if (!file.empty()) {
      c = inference::SamplerConfig::from_json(read_json(file));
      manifest.input("sampler", file);
    }
    if (chains) c.chains = *chains;
    if (warmup) c.warmup = *warmup;
    if (samples) c.samples = *samples;
    if (max_depth) c.max_tree_depth = *max_depth;
    if (target_accept) c.target_accept = *target_accept;
    if (threads) c.threads = *threads;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

models::PriorConfig load_priors(const std::string& path, Manifest& manifest) {
  if (path.empty()) return {};
  manifest.input("priors", path);
  return models::PriorConfig::from_json(read_json(path));
}

void write_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  csv::Writer w(out);
  w.row(header);
  for (const auto& r : rows) w.row(r);
}

std::string num(double x) { return csv::format_number(x); }

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  SurveyArgs survey;
  std::string areas, cells, adm1_urban, out;
};

void cmd_ingest(const IngestArgs& a) {
  Manifest manifest("ingest");
  const auto data = a.survey.load(manifest);
  Outputs outputs(output_dir(a.out), manifest);

  outputs.write("households.csv", [&](std::ostream& o) { survey::write_households(o, data); });
  if (!a.survey.members.empty())
    outputs.write("members.csv", [&](std::ostream& o) {
      csv::Writer w(o);
      w.row({"household_id", "age_years", "sex"});
      for (const auto& h : data.households())
        for (const auto& m : h.members) {
          w.field(h.household_id).field(m.age_years).field(survey::to_string(m.sex));
          w.end_row();
        }
    });
  if (!a.survey.consumption.empty())
    outputs.write("consumption.csv", [&](std::ostream& o) {
      csv::Writer w(o);
      w.row({"household_id", "food_item_id", "quantity", "unit", "recall_days"});
      for (const auto& h : data.households())
        for (const auto& l : h.consumption_lines) {
          w.field(h.household_id).field(l.food_item_id).field(l.reported_quantity)
              .field(l.unit.str()).field(l.recall_days);
          w.end_row();
        }
    });

  if (!a.cells.empty() != !a.adm1_urban.empty())
    throw error(ErrorKind::misuse, "--cells and --adm1-urban go together");
  std::optional<survey::UrbanShares> shares;
  if (!a.cells.empty()) {
    manifest.input("cells", a.cells);
    manifest.input("adm1_urban", a.adm1_urban);
    const auto cells = survey::load_cells(a.cells);
    shares = survey::derive_urban_shares(cells, survey::load_adm1_urban_fractions(a.adm1_urban));
    outputs.write("cell_labels.csv", [&](std::ostream& o) {
      csv::Writer w(o);
      w.row({"cell_id", "urban"});
      for (const auto& c : cells) {
        w.field(c.cell_id).field(shares->cell_urban.at(c.cell_id) ? 1 : 0);
        w.end_row();
      }
    });
  }
  if (!a.areas.empty()) {
    manifest.input("areas", a.areas);
    auto table = survey::load_areas(a.areas);
    table.check_covers(data);
    survey::AreaTable updated;
    for (const auto& id : table.adm2_ids()) {
      auto info = table.at(id);
      if (shares) {
        auto it = shares->survey_year.find(id);
        if (it != shares->survey_year.end()) info.urban_proportion = it->second;
      }
      updated.add(id, info);
    }
    outputs.write("areas.csv", [&](std::ostream& o) { survey::write_areas(o, updated); });
  }
  outputs.finish();
}

// ---------------------------------------------------------------------------
// indicators

struct IndicatorArgs {
  SurveyArgs survey;
  std::string composition, units, requirements, config, out;
};

void cmd_indicators(const IndicatorArgs& a) {
  Manifest manifest("indicators");
  const auto data = a.survey.load(manifest);
  manifest.input("composition", a.composition);
  manifest.input("requirements", a.requirements);
  manifest.input("config", a.config);
  const auto composition = survey::load_composition(a.composition);
  survey::UnitConversionTable units;
  if (!a.units.empty()) {
    manifest.input("units", a.units);
    units = survey::load_unit_conversions(a.units);
  }
  const auto cfg = indicators::load_indicator_config(a.config);
  const auto reqs = survey::load_requirements(a.requirements, cfg.reference_requirement);
  const auto rows = indicators::compute_indicators(data, composition, units, reqs, cfg.rules);
  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("indicators.csv", [&](std::ostream& o) { indicators::write_indicators(o, rows); });
  outputs.finish();
}

// ---------------------------------------------------------------------------
// direct

struct DirectArgs {
  SurveyArgs survey;
  std::string indicators, nutrient, level = "adm2", method = "linearized", out;
  bool no_phantom = false, continuity = false;
};

design::DirectOptions direct_options(const std::string& method, bool no_phantom, bool continuity) {
  design::DirectOptions o;
  o.method = method == "effective" ? design::VarianceMethod::effective_sample
                                   : design::VarianceMethod::linearized;
  o.phantom = !no_phantom;
  o.continuity_adjustment = continuity;
  return o;
}

void cmd_direct(const DirectArgs& a) {
  Manifest manifest("direct");
  const auto data = a.survey.load(manifest);
  manifest.input("indicators", a.indicators);
  manifest.config() = {{"nutrient", a.nutrient}, {"level", a.level}, {"method", a.method},
                       {"phantom", !a.no_phantom}, {"continuity", a.continuity}};
  const auto y = indicators::indicator_column(data, a.indicators, a.nutrient);
  const auto level = a.level == "adm1" ? design::Level::adm1 : design::Level::adm2;
  auto est = design::direct_estimates(data, y, level,
                                      direct_options(a.method, a.no_phantom, a.continuity));
  design::cv_classify(est);
  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("direct.csv", [&](std::ostream& o) { design::write_direct(o, est); });
  if (level == design::Level::adm2) {
    const auto counts = design::cluster_counts(data, y);
    outputs.write("clusters.csv", [&](std::ostream& o) { design::write_cluster_counts(o, counts); });
  }
  outputs.finish();
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string model, direct, clusters, adjacency, areas, priors, out;
  SamplerArgs sampler;
};

void write_area_draws(std::ostream& out, const models::AreaPrevalenceDraws& d) {
  csv::Writer w(out);
  std::vector<std::string> header{"draw"};
  header.insert(header.end(), d.areas.begin(), d.areas.end());
  w.row(header);
  for (std::size_t r = 0; r < d.draws; ++r) {
    w.field(r);
    for (std::size_t a = 0; a < d.areas.size(); ++a) w.field(d.at(r, a));
    w.end_row();
  }
}

models::AreaPrevalenceDraws read_area_draws(const fs::path& path) {
  const auto t = csv::read(path);
  if (t.header().empty() || t.header()[0] != "draw")
    throw error(ErrorKind::schema, path.string() + ": first column must be 'draw'");
  models::AreaPrevalenceDraws d;
  d.areas.assign(t.header().begin() + 1, t.header().end());
  d.draws = t.row_count();
  for (std::size_t r = 0; r < t.row_count(); ++r)
    for (std::size_t c = 1; c < t.header().size(); ++c) d.p.push_back(t.number(r, c));
  return d;
}

struct Summary {
  double mean, median, q05, q95, sd;
};

Summary summarize(std::vector<double> v) {
  Summary s{};
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / v.size();
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  s.q05 = inference::quantile(v, 0.05);
  s.median = inference::quantile(v, 0.5);
  s.q95 = inference::quantile(v, 0.95);
  return s;
}

void cmd_fit(const FitArgs& a, std::ostream& err) {
  Manifest manifest("fit");
  const auto kind = models::parse_model_kind(a.model);
  const auto sampler = a.sampler.resolve(manifest);
  const auto priors = load_priors(a.priors, manifest);

  std::optional<survey::AreaTable> areas;
  if (!a.areas.empty()) {
    manifest.input("areas", a.areas);
    areas = survey::load_areas(a.areas);
  }
  manifest.input("adjacency", a.adjacency);
  const auto graph = spatial::build_graph(a.adjacency, areas ? &areas->adm2_ids() : nullptr);
  const auto scaling = spatial::bym2_scaling(graph);

  std::unique_ptr<models::AreaModel> model;
  std::vector<std::string> excluded;
  if (kind == models::ModelKind::betabinomial) {
    if (a.clusters.empty()) throw error(ErrorKind::misuse, "betabinomial needs --clusters");
    if (!areas) throw error(ErrorKind::misuse, "betabinomial needs --areas with urban_proportion");
    manifest.input("clusters", a.clusters);
    const auto counts = design::load_cluster_counts(a.clusters);
    model = std::make_unique<models::BetaBinomialModel>(
        models::cluster_observations(counts, graph), graph, scaling, priors);
  } else {
    if (a.direct.empty()) throw error(ErrorKind::misuse, std::string(a.model) + " needs --direct");
    manifest.input("direct", a.direct);
    const auto direct =
        design::load_direct(a.direct, kind == models::ModelKind::joint_smoothing);
    auto obs = models::area_observations(direct, graph, &excluded);
    if (kind == models::ModelKind::mean_smoothing)
      model = std::make_unique<models::MeanSmoothingModel>(std::move(obs), graph, scaling, priors);
    else
      model = std::make_unique<models::JointSmoothingModel>(std::move(obs), graph, scaling, priors);
  }
  manifest.config() = {{"model", models::to_string(kind)},
                       {"sampler", sampler.to_json()},
                       {"priors", priors.to_json()},
                       {"seed", sampler.seed}};
  if (!excluded.empty()) {
    manifest.note("excluded_from_likelihood", excluded);
    err << "note: " << excluded.size() << " area(s) left out of the likelihood:";
    for (const auto& id : excluded) err << " " << id;
    err << "\n";
  }

  const auto result = inference::sample(*model, sampler);
  for (const auto& w : result.diagnostics.warnings) err << "warning: " << w << "\n";
  const auto prev = models::prevalence_from_draws(result.draws.values, *model,
                                                  areas ? &*areas : nullptr);

  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("estimates.csv", [&](std::ostream& o) {
    csv::Writer w(o);
    std::vector<std::string> header{"area_id", "mean", "median", "q05", "q95", "sd", "cv",
                                    "reliability_band"};
    const bool strata = !prev.urban.empty();
    if (strata) {
      header.push_back("urban_mean");
      header.push_back("rural_mean");
    }
    w.row(header);
    const std::size_t L = prev.areas.size();
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> col(prev.draws);
      for (std::size_t d = 0; d < prev.draws; ++d) col[d] = prev.at(d, l);
      const auto s = summarize(col);
      std::optional<double> cv;
      if (s.mean > 0) cv = s.sd / s.mean;
      w.field(prev.areas[l]).field(s.mean).field(s.median).field(s.q05).field(s.q95).field(s.sd);
      if (cv) w.field(*cv); else w.empty();
      w.field(design::to_string(design::band_for(cv)));
      if (strata) {
        double u = 0, r = 0;
        for (std::size_t d = 0; d < prev.draws; ++d) {
          u += prev.urban[d * L + l];
          r += prev.rural[d * L + l];
        }
        w.field(u / prev.draws).field(r / prev.draws);
      }
      w.end_row();
    }
  });
  outputs.write("draws.csv", [&](std::ostream& o) { inference::write_draws(o, result.draws); });
  outputs.write("area_draws.csv", [&](std::ostream& o) { write_area_draws(o, prev); });
  outputs.write("diagnostics.csv",
                [&](std::ostream& o) { inference::write_diagnostics(o, result.diagnostics); });
  outputs.finish();
}

// ---------------------------------------------------------------------------
// aggregate

struct AggregateArgs {
  std::string area_draws, areas, direct, out;
};

double logit_or_nan(double p) {
  return p > 0.0 && p < 1.0 ? std::log(p / (1.0 - p)) : std::nan("");
}

void cmd_aggregate(const AggregateArgs& a) {
  Manifest manifest("aggregate");
  manifest.input("area_draws", a.area_draws);
  manifest.input("areas", a.areas);
  const auto draws = read_area_draws(a.area_draws);
  const auto areas = survey::load_areas(a.areas);
  for (const auto& id : draws.areas) {
    const auto* info = areas.find(id);
    if (!info) throw error(ErrorKind::lookup, "no population for area '" + id + "'");
  }
  const auto adm1 = models::aggregate_to_adm1(draws, areas);
  const std::size_t K = adm1.adm1_ids.size();

  std::optional<std::map<std::string, design::DirectEstimate>> direct;
  if (!a.direct.empty()) {
    manifest.input("direct", a.direct);
    direct.emplace();
    for (auto& e : design::load_direct(a.direct, false)) (*direct)[e.area_id] = e;
  }

  std::vector<simulation::IntervalEstimate> natural, logit;
  std::vector<simulation::GoldValue> gold_nat, gold_logit;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> col(adm1.draws), lcol(adm1.draws);
    for (std::size_t d = 0; d < adm1.draws; ++d) {
      col[d] = adm1.p[d * K + k];
      lcol[d] = logit_or_nan(col[d]);
    }
    const auto s = summarize(col);
    const bool finite = std::all_of(lcol.begin(), lcol.end(), [](double x) { return std::isfinite(x); });
    const auto ls = finite ? summarize(lcol) : Summary{NAN, NAN, NAN, NAN, NAN};
    const auto& id = adm1.adm1_ids[k];
    std::vector<std::string> row{id, num(s.mean), num(s.median), num(s.q05), num(s.q95), num(s.sd),
                                 num(ls.mean), num(ls.median), num(ls.q05), num(ls.q95), num(ls.sd)};
    if (direct) {
      auto it = direct->find(id);
      if (it == direct->end()) {
        row.insert(row.end(), {"NA", "NA"});
      } else {
        const auto& e = it->second;
        row.push_back(num(e.p_hat));
        row.push_back(num(e.has_variance() ? std::sqrt(e.v_hat) : NAN));
        natural.push_back({id, s.mean, s.q05, s.q95, {}});
        gold_nat.push_back({id, e.p_hat});
        const double lg = logit_or_nan(e.p_hat);
        if (finite && std::isfinite(lg)) {
          logit.push_back({id, ls.mean, ls.q05, ls.q95, {}});
          gold_logit.push_back({id, lg});
        }
      }
    }
    rows.push_back(std::move(row));
  }

  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("adm1_estimates.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"adm1_id", "mean", "median", "q05", "q95", "sd",
                                    "logit_mean", "logit_median", "logit_q05", "logit_q95",
                                    "logit_sd"};
    if (direct) header.insert(header.end(), {"direct_p_hat", "direct_se"});
    write_table(o, header, rows);
  });
  if (direct) {
    outputs.write("adm1_metrics.csv", [&](std::ostream& o) {
      std::vector<std::vector<std::string>> m;
      for (auto [scale, est, gold] : {std::tuple{"natural", &natural, &gold_nat},
                                      std::tuple{"logit", &logit, &gold_logit}}) {
        const auto s = simulation::evaluate(*est, *gold);
        m.push_back({scale, std::to_string(s.areas), num(s.mae), num(s.spearman), num(s.mil),
                     num(s.coverage)});
      }
      write_table(o, {"scale", "areas", "mae", "spearman", "mil", "coverage"}, m);
    });
  }
  outputs.finish();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  SurveyArgs survey;
  std::string indicators, nutrient, adjacency, areas, truth, priors, out;
  std::string models = "direct";
  int eas = 30, replicates = 10;
  std::string method = "linearized";
  bool no_phantom = false;
  SamplerArgs sampler;
};

std::vector<simulation::GoldValue> read_gold(const fs::path& path, const std::string& column) {
  const auto t = csv::read(path);
  const std::size_t c_id = t.column("area_id");
  std::size_t c_v;
  if (!column.empty()) {
    c_v = t.column(column);
  } else if (auto c = t.find_column("value")) {
    c_v = *c;
  } else if (auto p = t.find_column("p_hat")) {
    c_v = *p;
  } else {
    c_v = t.column("mean");
  }
  std::vector<simulation::GoldValue> out;
  for (std::size_t r = 0; r < t.row_count(); ++r) out.push_back({t.cell(r, c_id), t.number(r, c_v)});
  return out;
}

void cmd_simulate(const SimulateArgs& a) {
  Manifest manifest("simulate");
  const auto data = a.survey.load(manifest);
  manifest.input("indicators", a.indicators);
  const auto y = indicators::indicator_column(data, a.indicators, a.nutrient);
  const auto sampler = a.sampler.resolve(manifest);
  const auto priors = load_priors(a.priors, manifest);

  simulation::ValidationOptions opt;
  opt.include_direct = false;
  std::stringstream list(a.models);
  for (std::string item; std::getline(list, item, ',');) {
    if (item == "direct")
      opt.include_direct = true;
    else
      opt.models.push_back(models::parse_model_kind(item));
  }
  opt.sampler = sampler;
  opt.priors = priors;
  opt.direct = direct_options(a.method, a.no_phantom, false);
  if (a.sampler.threads) opt.threads = *a.sampler.threads;

  std::optional<survey::AreaTable> areas;
  if (!a.areas.empty()) {
    manifest.input("areas", a.areas);
    areas = survey::load_areas(a.areas);
  }
  manifest.input("adjacency", a.adjacency);
  const auto graph = spatial::build_graph(a.adjacency, areas ? &areas->adm2_ids() : nullptr);
  const auto scaling = spatial::bym2_scaling(graph);

  simulation::ValidationInput input{&data, y, &graph, &scaling, areas ? &*areas : nullptr,
                                    std::nullopt};
  if (!a.truth.empty()) {
    manifest.input("truth", a.truth);
    input.truth = read_gold(a.truth, "");
  }
  simulation::SubsampleDesign design{a.eas, a.replicates, sampler.seed};
  manifest.config() = {{"nutrient", a.nutrient},     {"models", a.models},
                       {"eas_per_adm1", a.eas},       {"replicates", a.replicates},
                       {"seed", sampler.seed},        {"sampler", sampler.to_json()},
                       {"priors", priors.to_json()},  {"method", a.method},
                       {"phantom", !a.no_phantom},    {"mode", a.truth.empty() ? "gold" : "truth"}};
  const auto report = simulation::run_validation(input, design, opt);

  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("replicates.csv",
                [&](std::ostream& o) { simulation::write_replicates(o, report.rows); });
  outputs.write("summary.csv",
                [&](std::ostream& o) { simulation::write_summary(o, report.averages); });
  outputs.finish();
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string estimates, gold, gold_column, out;
  double alpha = 0.1;
};

void cmd_evaluate(const EvaluateArgs& a) {
  Manifest manifest("evaluate");
  manifest.input("estimates", a.estimates);
  manifest.input("gold", a.gold);
  manifest.config() = {{"alpha", a.alpha}, {"gold_column", a.gold_column}};

  std::vector<simulation::IntervalEstimate> est;
  const auto t = csv::read(a.estimates);
  if (t.find_column("mean") && t.find_column("q05") && t.find_column("q95")) {
    const std::size_t c_id = t.column("area_id"), c_m = t.column("mean"),
                      c_lo = t.column("q05"), c_hi = t.column("q95");
    const auto c_cv = t.find_column("cv");
    for (std::size_t r = 0; r < t.row_count(); ++r)
      est.push_back({t.cell(r, c_id), t.number(r, c_m), t.number(r, c_lo), t.number(r, c_hi),
                     c_cv ? t.optional_number(r, *c_cv) : std::nullopt});
  } else {
    auto direct = design::load_direct(a.estimates, false);
    design::cv_classify(direct);
    est = simulation::direct_intervals(direct);
  }
  const auto gold = read_gold(a.gold, a.gold_column);
  const auto m = simulation::evaluate(est, gold, a.alpha);

  Outputs outputs(output_dir(a.out), manifest);
  outputs.write("metrics.csv", [&](std::ostream& o) {
    using design::ReliabilityBand;
    auto band = [&](ReliabilityBand b) { return std::to_string(m.bands.at(b)); };
    write_table(o,
                {"areas", "mae", "spearman", "coverage", "mil", "mis", "mean_cv",
                 "n_unrestricted", "n_caution", "n_unreliable", "n_undefined"},
                {{std::to_string(m.areas), num(m.mae), num(m.spearman), num(m.coverage),
                  num(m.mil), num(m.mis), num(m.mean_cv), band(ReliabilityBand::unrestricted),
                  band(ReliabilityBand::caution), band(ReliabilityBand::unreliable),
                  band(ReliabilityBand::undefined)}});
  });
  outputs.finish();
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  simulation::SyntheticConfig config;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  Manifest manifest("synth");
  const auto& c = a.config;
  manifest.config() = {{"adm1", c.adm1},
                       {"areas", c.areas},
                       {"clusters_per_area", c.clusters_per_area},
                       {"households_per_cluster", c.households_per_cluster},
                       {"urban_fraction", c.urban_fraction},
                       {"beta0", c.beta0},
                       {"beta_urban", c.beta_urban},
                       {"sigma_u", c.sigma_u},
                       {"phi", c.phi},
                       {"rho", c.rho},
                       {"seed", c.seed}};
  const fs::path dir = output_dir(a.out);
  for (const auto& name : write_fixture(c, dir)) manifest.output(dir, name);
  manifest.write(dir);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Small-area prevalence estimation from household consumption surveys"};
  app.set_version_flag("--version", SAE_VERSION);
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "validate and canonicalize survey inputs");
  ingest.survey.add(c_ingest, false);
  c_ingest->add_option("--areas", ingest.areas, "area table")->check(CLI::ExistingFile);
  c_ingest->add_option("--cells", ingest.cells, "gridded population")->check(CLI::ExistingFile);
  c_ingest->add_option("--adm1-urban", ingest.adm1_urban, "ADM1 urban fractions")
      ->check(CLI::ExistingFile);
  c_ingest->add_option("--out", ingest.out, "output directory");

  IndicatorArgs ind;
  auto* c_ind = app.add_subcommand("indicators", "household inadequacy indicators");
  ind.survey.add(c_ind, true);
  c_ind->add_option("--composition", ind.composition)->required()->check(CLI::ExistingFile);
  c_ind->add_option("--units", ind.units)->check(CLI::ExistingFile);
  c_ind->add_option("--requirements", ind.requirements)->required()->check(CLI::ExistingFile);
  c_ind->add_option("--config", ind.config, "indicator rules (JSON)")->required()->check(CLI::ExistingFile);
  c_ind->add_option("--out", ind.out);

  DirectArgs dir;
  auto* c_dir = app.add_subcommand("direct", "design-based direct estimates");
  dir.survey.add(c_dir, false);
  c_dir->add_option("--indicators", dir.indicators)->required()->check(CLI::ExistingFile);
  c_dir->add_option("--nutrient", dir.nutrient)->required();
  c_dir->add_option("--level", dir.level)->check(CLI::IsMember({"adm1", "adm2"}));
  c_dir->add_option("--method", dir.method)->check(CLI::IsMember({"linearized", "effective"}));
  c_dir->add_flag("--no-phantom", dir.no_phantom);
  c_dir->add_flag("--continuity", dir.continuity);
  c_dir->add_option("--out", dir.out);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit a small-area model");
  c_fit->add_option("--model", fit.model)->required()->check(
      CLI::IsMember({"mean", "joint", "betabinomial"}));
  c_fit->add_option("--direct", fit.direct, "direct estimates (mean, joint)")->check(CLI::ExistingFile);
  c_fit->add_option("--clusters", fit.clusters, "cluster counts (betabinomial)")->check(CLI::ExistingFile);
  c_fit->add_option("--adjacency", fit.adjacency)->required()->check(CLI::ExistingFile);
  c_fit->add_option("--areas", fit.areas)->check(CLI::ExistingFile);
  c_fit->add_option("--priors", fit.priors, "JSON prior overrides")->check(CLI::ExistingFile);
  fit.sampler.add(c_fit);
  c_fit->add_option("--out", fit.out);

  AggregateArgs agg;
  auto* c_agg = app.add_subcommand("aggregate", "population-weighted ADM1 summaries");
  c_agg->add_option("--area-draws", agg.area_draws)->required()->check(CLI::ExistingFile);
  c_agg->add_option("--areas", agg.areas)->required()->check(CLI::ExistingFile);
  c_agg->add_option("--direct", agg.direct, "ADM1 direct estimates")->check(CLI::ExistingFile);
  c_agg->add_option("--out", agg.out);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "sub-sampling validation experiment");
  sim.survey.add(c_sim, false);
  c_sim->add_option("--indicators", sim.indicators)->required()->check(CLI::ExistingFile);
  c_sim->add_option("--nutrient", sim.nutrient)->required();
  c_sim->add_option("--adjacency", sim.adjacency)->required()->check(CLI::ExistingFile);
  c_sim->add_option("--areas", sim.areas)->check(CLI::ExistingFile);
  c_sim->add_option("--truth", sim.truth, "true area values (simulated-truth mode)")
      ->check(CLI::ExistingFile);
  c_sim->add_option("--models", sim.models, "comma list of direct, mean, joint, betabinomial");
  c_sim->add_option("--eas-per-adm1", sim.eas)->check(CLI::PositiveNumber);
  c_sim->add_option("--replicates", sim.replicates)->check(CLI::PositiveNumber);
  c_sim->add_option("--method", sim.method)->check(CLI::IsMember({"linearized", "effective"}));
  c_sim->add_flag("--no-phantom", sim.no_phantom);
  c_sim->add_option("--priors", sim.priors)->check(CLI::ExistingFile);
  sim.sampler.add(c_sim);
  c_sim->add_option("--out", sim.out);

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "score estimates against gold values");
  c_ev->add_option("--estimates", ev.estimates)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--gold", ev.gold)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--gold-column", ev.gold_column);
  c_ev->add_option("--alpha", ev.alpha)->check(CLI::Range(0.0, 1.0));
  c_ev->add_option("--out", ev.out);

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "write a synthetic raw survey fixture");
  c_syn->add_option("--adm1", syn.config.adm1)->check(CLI::PositiveNumber);
  c_syn->add_option("--areas", syn.config.areas)->check(CLI::PositiveNumber);
  c_syn->add_option("--clusters-per-area", syn.config.clusters_per_area)->check(CLI::PositiveNumber);
  c_syn->add_option("--households-per-cluster", syn.config.households_per_cluster)
      ->check(CLI::PositiveNumber);
  c_syn->add_option("--seed", syn.config.seed);
  c_syn->add_option("--out", syn.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "argument error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_ingest) cmd_ingest(ingest);
    else if (*c_ind) cmd_indicators(ind);
    else if (*c_dir) cmd_direct(dir);
    else if (*c_fit) cmd_fit(fit, err);
    else if (*c_agg) cmd_aggregate(agg);
    else if (*c_sim) cmd_simulate(sim);
    else if (*c_ev) cmd_evaluate(ev);
    else if (*c_syn) cmd_synth(syn);
  } catch (const Error& e) {
    err << "error [" << e.module() << ", " << to_string(e.kind()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace sae::cli
