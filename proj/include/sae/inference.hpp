#pragma once

// Multinomial NUTS with diagonal metric, windowed warmup and convergence
// diagnostics (rank-normalized split R-hat, bulk ESS).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sae/log_density.hpp"

namespace sae::inference {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 20240101;
  // 0: SAE_THREADS if set, else one thread per chain.
  int threads = 0;
  double init_radius = 2.0;

  void validate() const;
  static SamplerConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::size_t chains = 0;
  std::size_t iterations = 0;
  std::vector<double> values;       // chain x iteration x parameter
  std::vector<std::uint8_t> divergent;  // chain x iteration
  std::vector<std::uint8_t> tree_depth; // chain x iteration
  std::vector<double> log_density;  // chain x iteration
  std::vector<double> accept_stat;  // chain x iteration
  std::vector<double> step_size;    // per chain, after adaptation
  std::vector<std::vector<double>> inverse_metric;  // per chain

  std::size_t parameters() const { return names.size(); }
  double at(std::size_t chain, std::size_t iter, std::size_t param) const {
    return values[(chain * iterations + iter) * names.size() + param];
  }
  // All draws of one parameter, chain-major.
  std::vector<double> column(std::size_t param) const;
  // Rows are draws (chain-major), columns parameters.
  std::span<const double> matrix() const { return values; }
  std::size_t divergences() const;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double median = 0.0;
  double q95 = 0.0;
  std::optional<double> rhat;  // absent for a single chain
  double ess_bulk = 0.0;
  bool degenerate = false;     // zero variance: ESS undefined
};

struct Diagnostics {
  std::vector<ParameterSummary> parameters;
  std::size_t divergences = 0;
  double divergence_rate = 0.0;
  double mean_tree_depth = 0.0;
  std::size_t max_depth_hits = 0;
  std::vector<std::string> warnings;

  std::optional<double> max_rhat() const;
  double min_ess() const;
};

// Rank-normalized split R-hat; nullopt with fewer than two chains. draws is
// chain-major with iterations per chain.
std::optional<double> split_rhat(std::span<const double> draws, std::size_t chains);
// Bulk ESS on rank-normalized split chains; nullopt if every draw is equal.
std::optional<double> ess_bulk(std::span<const double> draws, std::size_t chains);
double quantile(std::vector<double> values, double q);

Diagnostics diagnose(const PosteriorDraws& draws, int max_tree_depth = 10);

struct SampleResult {
  PosteriorDraws draws;
  Diagnostics diagnostics;
};

SampleResult sample(const LogDensity& target, const SamplerConfig& config);

struct GradientReport {
  double max_relative_error = 0.0;
  std::size_t worst_point = 0;
  std::size_t worst_coordinate = 0;
  // Coordinates whose error exceeds the tolerance, per point.
  std::vector<std::pair<std::size_t, std::size_t>> flagged;
};

// Central differences with step 1e-5 * max(1, |x_i|). Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1).
GradientReport gradient_check(const LogDensity& target,
                              const std::vector<std::vector<double>>& points,
                              double tolerance = 1e-5);

// One leapfrog step with a diagonal inverse metric; updates q, p and grad in
// place and returns the new log density.
double leapfrog(const LogDensity& target, std::span<double> q, std::span<double> p,
                std::span<double> grad, double step,
                std::span<const double> inverse_metric);

// Columns: chain, iteration, divergent, tree_depth, lp__, then parameters.
void write_draws(std::ostream& out, const PosteriorDraws& draws);
void write_diagnostics(std::ostream& out, const Diagnostics& diagnostics);

}  // namespace sae::inference
