#pragma once

// Validation harness: stratified PPS sub-sampling of a full survey, replicate
// orchestration over the direct estimator and the area models, and the
// metric battery (MAE, Spearman, 90% coverage, interval length and score).

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sae/design.hpp"
#include "sae/inference.hpp"
#include "sae/models.hpp"
#include "sae/spatial_graph.hpp"
#include "sae/survey_data.hpp"

namespace sae::simulation {

struct SubsampleDesign {
  int eas_per_adm1 = 30;
  int replicates = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

// Largest-remainder split of total over strata in proportion to the number
// of available EAs; ties go to the stratum whose name sorts first. Throws
// naming the stratum when a share exceeds what is available.
std::map<survey::Stratum, int> allocate(
    int total, const std::map<survey::Stratum, int>& available,
    const std::string& adm1_id);

// Cluster indices selected for one replicate, ascending. Within each ADM1 x
// stratum the allocated EAs are drawn sequentially without replacement with
// probability proportional to the EA weight (sum of household weights).
std::vector<std::size_t> subsample_clusters(const survey::SurveyDataset& full,
                                            const SubsampleDesign& design,
                                            std::size_t replicate);

struct PseudoSurvey {
  survey::SurveyDataset data;
  std::vector<double> y;  // indicator carried over, in data's household order
};

PseudoSurvey subsample(const survey::SurveyDataset& full,
                       std::span<const double> y,
                       const SubsampleDesign& design, std::size_t replicate);

double winkler_score(double lower, double upper, double y, double alpha = 0.1);

struct IntervalEstimate {
  std::string area_id;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::optional<double> cv;
};

struct GoldValue {
  std::string area_id;
  double value = 0.0;
};

struct MetricSummary {
  std::size_t areas = 0;
  double mae = 0.0;
  double spearman = 0.0;  // NaN when either ranking is constant
  double coverage = 0.0;
  double mil = 0.0;
  double mis = 0.0;
  double mean_cv = 0.0;   // over areas with a defined cv; NaN if none
  std::map<design::ReliabilityBand, std::size_t> bands;
};

// Spearman correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// Estimates and gold must cover the same area ids (any order).
MetricSummary evaluate(std::span<const IntervalEstimate> estimates,
                       std::span<const GoldValue> gold, double alpha = 0.1);

// Direct estimate +/- z_0.95 sqrt(v), clipped to [0, 1]. Estimates without a
// defined variance are skipped.
std::vector<IntervalEstimate> direct_intervals(
    std::span<const design::DirectEstimate> direct);

// Posterior mean, equal-tailed 5% / 95% quantiles and cv = sd / mean per area.
std::vector<IntervalEstimate> posterior_intervals(
    const models::AreaPrevalenceDraws& draws);

struct ValidationInput {
  const survey::SurveyDataset* survey = nullptr;
  std::span<const double> y;
  const spatial::AdjacencyGraph* graph = nullptr;
  const spatial::Bym2Scaling* scaling = nullptr;
  // Needed by the beta-binomial model for urban shares.
  const survey::AreaTable* areas = nullptr;
  // Simulated-truth mode when set; otherwise gold = full-survey direct
  // estimates at ADM2.
  std::optional<std::vector<GoldValue>> truth;
};

struct ValidationOptions {
  std::vector<models::ModelKind> models;
  bool include_direct = true;
  inference::SamplerConfig sampler;
  models::PriorConfig priors;
  design::DirectOptions direct;
  int threads = 0;  // replicate workers; 0 = SAE_THREADS or 1
};

struct ReplicateRow {
  std::size_t replicate = 0;
  std::string method;
  bool failed = false;
  std::string failure;
  std::size_t excluded_areas = 0;  // areas without an estimate
  MetricSummary metrics;
};

struct MethodAverage {
  std::string method;
  std::size_t replicates = 0;
  std::size_t failed = 0;
  double mae = 0.0;
  double spearman = 0.0;
  double coverage = 0.0;
  double mil = 0.0;
  double mis = 0.0;
  double mean_excluded = 0.0;
};

struct MetricReport {
  std::vector<ReplicateRow> rows;  // replicate-major, methods in input order
  std::vector<MethodAverage> averages;
};

// Metrics for one replicate: direct baseline first (if requested) then each
// model. A model that throws is reported as a failed row.
std::vector<ReplicateRow> validate_replicate(const ValidationInput& input,
                                             const SubsampleDesign& design,
                                             const ValidationOptions& options,
                                             std::size_t replicate);

MetricReport run_validation(const ValidationInput& input,
                            const SubsampleDesign& design,
                            const ValidationOptions& options);

// Averages replicate rows per method; failed rows are counted, not averaged.
std::vector<MethodAverage> average(std::span<const ReplicateRow> rows);

std::string method_name(const std::optional<models::ModelKind>& kind);

// Columns: replicate, method, status, areas, excluded, mae, spearman,
// coverage, mil, mis, mean_cv, then one count column per reliability band.
void write_replicates(std::ostream& out, std::span<const ReplicateRow> rows);
// One row per method, metrics as columns.
void write_summary(std::ostream& out, std::span<const MethodAverage> averages);

// Synthetic population drawn from the beta-binomial model with a BYM2 field
// on a two-row grid of areas.
struct SyntheticConfig {
  std::size_t adm1 = 2;
  std::size_t areas = 10;
  std::size_t clusters_per_area = 20;
  std::size_t households_per_cluster = 10;
  double urban_fraction = 0.3;
  double beta0 = -0.5;
  double beta_urban = -0.5;
  double sigma_u = 0.6;
  double phi = 0.5;
  double rho = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticPopulation {
  survey::SurveyDataset survey;
  std::vector<double> y;
  spatial::AdjacencyGraph graph;
  survey::AreaTable areas;
  std::vector<GoldValue> truth;  // q r_urban + (1 - q) r_rural per area
};

// Different populations per replicate come from different replicate keys.
SyntheticPopulation synthesize(const SyntheticConfig& config,
                               std::uint64_t replicate = 0);

}  // namespace sae::simulation
