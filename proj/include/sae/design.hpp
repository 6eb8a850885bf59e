#pragma once

// Design-based direct estimators: Hajek prevalence, with-replacement
// linearization variance over clusters, phantom-cluster augmentation for
// single-cluster areas, effective-sample-size variance, the logit delta
// method, and coefficient-of-variation reliability bands.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sae/survey_data.hpp"

namespace sae::design {

double hajek(std::span<const double> y, std::span<const double> w);

// A phantom cluster is stored as one pseudo-household whose y is the ADM1
// prevalence and whose weight is the ADM1 mean cluster weight.
struct ClusterSample {
  std::vector<double> y;
  std::vector<double> w;
  bool phantom = false;
};

struct AreaSample {
  std::string area_id;
  std::vector<ClusterSample> clusters;
};

struct VarianceEstimate {
  double p_hat = 0.0;
  double v_hat = 0.0;
  double dof = 0.0;
};

VarianceEstimate linearized_variance(const AreaSample& area);

AreaSample phantom_augment(const AreaSample& area, double adm1_prevalence,
                           double adm1_mean_cluster_weight);

struct EffectiveSampleEstimate {
  double p_hat = 0.0;
  double v_hat = 0.0;
  double dof = 0.0;
  double n_effective = 0.0;
  bool degenerate_dof = false;  // n_effective <= 1
};

// Weights are normalized to sum to one inside the call.
EffectiveSampleEstimate effective_sample_variance(std::span<const double> y,
                                                  std::span<const double> w);

enum class ReliabilityBand { unrestricted, caution, unreliable, undefined };

const char* to_string(ReliabilityBand band);
ReliabilityBand parse_band(const std::string& text);
// cv < 0.166 unrestricted; 0.166 <= cv <= 0.333 caution; above unreliable.
ReliabilityBand band_for(std::optional<double> cv);

struct DirectEstimate {
  std::string area_id;
  double p_hat = 0.0;
  double v_hat = 0.0;   // NaN when the variance is undefined
  double dof = 0.0;     // NaN when the variance is undefined
  long n_households = 0;
  long n_clusters = 0;
  std::optional<double> n_effective;
  std::optional<double> cv;
  ReliabilityBand band = ReliabilityBand::undefined;
  bool phantom_used = false;
  bool boundary_adjusted = false;
  bool degenerate_dof = false;

  bool has_variance() const;
};

struct LogitEstimate {
  double logit = 0.0;
  double variance = 0.0;
};

LogitEstimate logit_scale(const DirectEstimate& est);

// Fills cv and band on each estimate.
void cv_classify(std::span<DirectEstimate> estimates);

enum class VarianceMethod { linearized, effective_sample };
enum class Level { adm1, adm2 };

struct DirectOptions {
  VarianceMethod method = VarianceMethod::linearized;
  bool phantom = true;
  // Replace boundary prevalences (0 or 1) by (sum wy + v/2) / (sum w + v),
  // v being the mean household weight. Intended for ADM1 sense checks only.
  bool continuity_adjustment = false;
};

// One estimate per area in dataset order. y is indexed like the households.
std::vector<DirectEstimate> direct_estimates(const survey::SurveyDataset& data,
                                             std::span<const double> y,
                                             Level level,
                                             const DirectOptions& options = {});

void write_direct(std::ostream& out, std::span<const DirectEstimate> estimates);
// require_dof: raise a schema error when the dof column is absent.
std::vector<DirectEstimate> load_direct(const std::filesystem::path& path,
                                        bool require_dof);

struct ClusterCount {
  std::string cluster_id;
  std::string adm1_id;
  std::string adm2_id;
  survey::Stratum stratum = survey::Stratum::rural;
  long y = 0;
  long n = 0;
  double weight = 0.0;
};

std::vector<ClusterCount> cluster_counts(const survey::SurveyDataset& data,
                                         std::span<const double> y);
void write_cluster_counts(std::ostream& out, std::span<const ClusterCount> counts);
std::vector<ClusterCount> load_cluster_counts(const std::filesystem::path& path);

}  // namespace sae::design
