#pragma once

// Log posteriors (value and exact gradient) for the three small-area models,
// their priors, and reconstruction of area prevalences from posterior draws.
//
//   mean smoothing   p_hat_l ~ N(p_l, V_hat_l), logit p_l = beta0 + u_l
//   joint smoothing  adds d_l V_hat_l / V_l ~ chi2(d_l) with
//                    log V_l = g0 + g1 log(p_l(1-p_l)) + g2 log n_l + tau_l
//   beta-binomial    y_c ~ BetaBinomial(n_c, r_c, rho),
//                    logit r_c = beta0 + beta z_c + u_{area(c)}
//
// u_l = sigma_u (sqrt(1-phi) u1_l + sqrt(phi) u2_l / alpha) is the BYM2 field
// with an ICAR prior on u2. All positive / unit-interval parameters are
// sampled on log / logit scales with Jacobian terms included.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sae/design.hpp"
#include "sae/log_density.hpp"
#include "sae/spatial_graph.hpp"
#include "sae/survey_data.hpp"

namespace sae::models {

struct NormalPrior {
  double mean = 0.0;
  double sd = 1.0;
};

struct PcPrior {
  double threshold = 1.0;  // P(sigma > threshold) = tail
  double tail = 0.01;
  double rate() const;
};

struct PriorConfig {
  double coef_variance = 5.0;  // beta0 and beta (variance, not sd)
  NormalPrior gamma0{0.0, 1.0};
  NormalPrior gamma1{1.0, 0.5};
  NormalPrior gamma2{-1.0, 0.5};
  PcPrior sigma_u;
  PcPrior sigma_tau;
  double phi_a = 1.0;
  double phi_b = 1.0;
  // Mean of u2 within a component of size k ~ N(0, (scale * k)^2).
  double sum_to_zero_scale = 0.001;

  void validate() const;
  static PriorConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

double pc_prior_logdensity(double sigma, const PcPrior& prior);
double normal_logpdf(double x, double mean, double variance);
double chi_square_logpdf(double x, double dof);
double betabinomial_logpmf(long y, long n, double mean, double rho);

enum class ModelKind { mean_smoothing, joint_smoothing, betabinomial };
const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

// Direct estimate for one graph node, as used by the area-level models.
struct AreaObservation {
  std::size_t node = 0;
  double p_hat = 0.0;
  double v_hat = 0.0;
  double dof = 0.0;
  double n = 0.0;  // sample size used in the variance regression
};

// Converts direct estimates into likelihood inputs. Areas whose estimate is
// on the boundary (0 or 1), whose variance is undefined or zero, or whose
// dof is not positive are left out of the likelihood and listed in excluded.
std::vector<AreaObservation> area_observations(
    std::span<const design::DirectEstimate> direct,
    const spatial::AdjacencyGraph& graph,
    std::vector<std::string>* excluded = nullptr);

struct ClusterObservation {
  std::size_t node = 0;
  long y = 0;
  long n = 0;
  bool urban = false;
};

std::vector<ClusterObservation> cluster_observations(
    std::span<const design::ClusterCount> counts,
    const spatial::AdjacencyGraph& graph);

// Shared by the three models; offsets index the unconstrained vector.
class Bym2Block {
 public:
  Bym2Block(const spatial::AdjacencyGraph& graph,
            const spatial::Bym2Scaling& scaling, std::size_t beta0,
            std::size_t log_sigma, std::size_t logit_phi, std::size_t u1,
            std::size_t u2);

  std::size_t areas() const { return graph_->size(); }

  // u_l for every node, from unconstrained x.
  void field(std::span<const double> x, std::span<double> u) const;
  // Same, from constrained values.
  void field(double sigma, double phi, std::span<const double> u1,
             std::span<const double> u2, std::span<double> u) const;

  // Adds d/dx of a function of (beta0 + u) given its derivative per node.
  void backprop(std::span<const double> x, std::span<const double> u,
                std::span<const double> d_eta, std::span<double> grad) const;

  // Priors on beta0, sigma_u, phi, u1, u2 plus Jacobians; adds to grad.
  double log_prior(std::span<const double> x, const PriorConfig& priors,
                   std::span<double> grad) const;

  std::size_t beta0() const { return beta0_; }
  std::size_t log_sigma() const { return log_sigma_; }
  std::size_t logit_phi() const { return logit_phi_; }
  std::size_t u1() const { return u1_; }
  std::size_t u2() const { return u2_; }

 private:
  const spatial::AdjacencyGraph* graph_;
  const spatial::Bym2Scaling* scaling_;
  std::size_t beta0_, log_sigma_, logit_phi_, u1_, u2_;
  std::vector<double> structured_scale_;  // 1/alpha, or 0 for singletons
};

// Common interface for the three posteriors.
class AreaModel : public LogDensity {
 public:
  AreaModel(ModelKind kind, const spatial::AdjacencyGraph& graph,
            const spatial::Bym2Scaling& scaling, PriorConfig priors);

  ModelKind kind() const { return kind_; }
  const spatial::AdjacencyGraph& graph() const { return *graph_; }
  const PriorConfig& priors() const { return priors_; }

  // Area prevalence per node from one constrained draw. For the
  // beta-binomial model urban_share gives q_l per node and urban / rural
  // receive the stratum prevalences when non-empty.
  virtual void area_prevalence(std::span<const double> constrained,
                               std::span<const double> urban_share,
                               std::span<double> p, std::span<double> urban,
                               std::span<double> rural) const = 0;

  // Index of each BYM2 quantity in the constrained vector.
  struct ConstrainedLayout {
    std::size_t beta0, sigma_u, phi, u1, u2;
    std::optional<std::size_t> beta_urban;
  };
  virtual ConstrainedLayout constrained_layout() const = 0;

 protected:
  ModelKind kind_;
  const spatial::AdjacencyGraph* graph_;
  const spatial::Bym2Scaling* scaling_;
  PriorConfig priors_;
};

class MeanSmoothingModel final : public AreaModel {
 public:
  MeanSmoothingModel(std::vector<AreaObservation> data,
                     const spatial::AdjacencyGraph& graph,
                     const spatial::Bym2Scaling& scaling,
                     PriorConfig priors = {});

  std::size_t dimension() const override;
  double log_density(std::span<const double> x,
                     std::span<double> grad) const override;
  std::vector<std::string> parameter_names() const override;
  void constrain(std::span<const double> x,
                 std::span<double> out) const override;
  void area_prevalence(std::span<const double> constrained,
                       std::span<const double> urban_share, std::span<double> p,
                       std::span<double> urban,
                       std::span<double> rural) const override;
  ConstrainedLayout constrained_layout() const override;

  // Log likelihood of the direct estimates alone (no priors).
  double log_likelihood(std::span<const double> x) const;

 private:
  std::vector<AreaObservation> data_;
  Bym2Block block_;
};

class JointSmoothingModel final : public AreaModel {
 public:
  JointSmoothingModel(std::vector<AreaObservation> data,
                      const spatial::AdjacencyGraph& graph,
                      const spatial::Bym2Scaling& scaling,
                      PriorConfig priors = {});

  std::size_t dimension() const override;
  double log_density(std::span<const double> x,
                     std::span<double> grad) const override;
  std::vector<std::string> parameter_names() const override;
  void constrain(std::span<const double> x,
                 std::span<double> out) const override;
  void area_prevalence(std::span<const double> constrained,
                       std::span<const double> urban_share, std::span<double> p,
                       std::span<double> urban,
                       std::span<double> rural) const override;
  ConstrainedLayout constrained_layout() const override;

  // Modelled sampling variance V_l for a prevalence and regression inputs.
  static double sampling_variance(double p, double n, double gamma0,
                                  double gamma1, double gamma2, double tau);

 private:
  std::vector<AreaObservation> data_;
  Bym2Block block_;
  std::size_t gamma0_, gamma1_, gamma2_, log_sigma_tau_, tau_;
};

class BetaBinomialModel final : public AreaModel {
 public:
  BetaBinomialModel(std::vector<ClusterObservation> data,
                    const spatial::AdjacencyGraph& graph,
                    const spatial::Bym2Scaling& scaling,
                    PriorConfig priors = {});

  std::size_t dimension() const override;
  double log_density(std::span<const double> x,
                     std::span<double> grad) const override;
  std::vector<std::string> parameter_names() const override;
  void constrain(std::span<const double> x,
                 std::span<double> out) const override;
  void area_prevalence(std::span<const double> constrained,
                       std::span<const double> urban_share, std::span<double> p,
                       std::span<double> urban,
                       std::span<double> rural) const override;
  ConstrainedLayout constrained_layout() const override;

 private:
  struct Group {
    std::size_t node;
    bool urban;
    long y, n;
    double count;  // clusters sharing these values
  };
  std::vector<ClusterObservation> data_;
  std::vector<Group> groups_;
  std::vector<std::pair<long, double>> n_counts_;  // distinct n, clusters with it
  double log_binom_ = 0.0;                         // sum of log C(n, y)
  Bym2Block block_;
  std::size_t beta_urban_, logit_rho_;
};

// Per-draw prevalences. Rows are draws, columns graph nodes.
struct AreaPrevalenceDraws {
  std::vector<std::string> areas;
  std::size_t draws = 0;
  std::vector<double> p;      // draws x areas, row-major
  std::vector<double> urban;  // beta-binomial only
  std::vector<double> rural;  // beta-binomial only

  double at(std::size_t draw, std::size_t area) const {
    return p[draw * areas.size() + area];
  }
};

// constrained_draws is (draws x constrained_dimension) row-major. For the
// beta-binomial model every node needs an urban share in the area table.
AreaPrevalenceDraws prevalence_from_draws(
    std::span<const double> constrained_draws, const AreaModel& model,
    const survey::AreaTable* areas = nullptr);

struct Adm1Draws {
  std::vector<std::string> adm1_ids;
  std::size_t draws = 0;
  std::vector<double> p;  // draws x adm1, row-major
};

// Population-weighted mean of member ADM2 prevalences per draw.
Adm1Draws aggregate_to_adm1(const AreaPrevalenceDraws& draws,
                            const survey::AreaTable& areas);

double inv_logit(double x);
double logit(double p);

}  // namespace sae::models
