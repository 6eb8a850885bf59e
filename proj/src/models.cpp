#include "sae/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/kernels/kernels.hpp"

namespace sae {

std::vector<std::string> LogDensity::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < constrained_dimension(); ++i)
    names.push_back("x[" + std::to_string(i) + "]");
  return names;
}

void LogDensity::constrain(std::span<const double> x,
                           std::span<double> out) const {
  std::copy(x.begin(), x.end(), out.begin());
}

std::vector<std::string> FunctionDensity::parameter_names() const {
  if (!names_.empty()) return names_;
  return LogDensity::parameter_names();
}

}  // namespace sae

namespace sae::models {

namespace {

constexpr const char* kModule = "models";
constexpr double kLog2Pi = 1.8378770664093454836;

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(p) and log(1-p) for p = inv_logit(eta).
double log_inv_logit(double eta) { return -softplus(-eta); }
double log1m_inv_logit(double eta) { return -softplus(eta); }

void check_finite(double value, const std::string& term) {
  if (!std::isfinite(value))
    throw error(ErrorKind::numerical, "non-finite log density in term '" + term + "'");
}

template <class T>
std::vector<T>& scratch(std::size_t slot, std::size_t n) {
  // Fixed slot count: references to earlier slots must survive later calls.
  thread_local std::array<std::vector<T>, 4> buffers;
  auto& b = buffers.at(slot);
  b.assign(n, T{});
  return b;
}

void check_prior_config(const PcPrior& pc, const char* name) {
  if (!(pc.threshold > 0.0) || !(pc.tail > 0.0 && pc.tail < 1.0))
    throw error(ErrorKind::validation,
                std::string("PC prior '") + name + "' needs threshold > 0 and tail in (0,1)");
}

}  // namespace

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double PcPrior::rate() const { return -std::log(tail) / threshold; }

void PriorConfig::validate() const {
  if (!(coef_variance > 0.0))
    throw error(ErrorKind::validation, "coefficient prior variance must be positive");
  for (const auto* g : {&gamma0, &gamma1, &gamma2})
    if (!(g->sd > 0.0))
      throw error(ErrorKind::validation, "gamma prior sd must be positive");
  check_prior_config(sigma_u, "sigma_u");
  check_prior_config(sigma_tau, "sigma_tau");
  if (!(phi_a > 0.0 && phi_b > 0.0))
    throw error(ErrorKind::validation, "phi Beta shapes must be positive");
  if (!(sum_to_zero_scale > 0.0))
    throw error(ErrorKind::validation, "sum-to-zero scale must be positive");
}

PriorConfig PriorConfig::from_json(const nlohmann::json& j) {
  PriorConfig c;
  auto normal = [&](const char* key, NormalPrior& target) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    target.mean = v.at(0).get<double>();
    target.sd = v.at(1).get<double>();
  };
  auto pc = [&](const char* key, PcPrior& target) {
    if (!j.contains(key)) return;
    target.threshold = j.at(key).at(0).get<double>();
    target.tail = j.at(key).at(1).get<double>();
  };
  try {
    for (const auto& [key, _] : j.items()) {
      static const std::vector<std::string> known{
          "coef_variance", "gamma0",     "gamma1", "gamma2",
          "pc_sigma",      "pc_sigma_tau", "phi_beta", "sum_to_zero_scale"};
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw error(ErrorKind::schema, "unknown prior setting '" + key + "'");
    }
    c.coef_variance = j.value("coef_variance", c.coef_variance);
    normal("gamma0", c.gamma0);
    normal("gamma1", c.gamma1);
    normal("gamma2", c.gamma2);
    pc("pc_sigma", c.sigma_u);
    pc("pc_sigma_tau", c.sigma_tau);
    if (j.contains("phi_beta")) {
      c.phi_a = j.at("phi_beta").at(0).get<double>();
      c.phi_b = j.at("phi_beta").at(1).get<double>();
    }
    c.sum_to_zero_scale = j.value("sum_to_zero_scale", c.sum_to_zero_scale);
  } catch (const nlohmann::json::exception& e) {
    throw error(ErrorKind::schema, std::string("prior config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json PriorConfig::to_json() const {
  return {
      {"coef_variance", coef_variance},
      {"gamma0", {gamma0.mean, gamma0.sd}},
      {"gamma1", {gamma1.mean, gamma1.sd}},
      {"gamma2", {gamma2.mean, gamma2.sd}},
      {"pc_sigma", {sigma_u.threshold, sigma_u.tail}},
      {"pc_sigma_tau", {sigma_tau.threshold, sigma_tau.tail}},
      {"phi_beta", {phi_a, phi_b}},
      {"sum_to_zero_scale", sum_to_zero_scale},
  };
}

double pc_prior_logdensity(double sigma, const PcPrior& prior) {
  if (!(sigma > 0.0)) throw error(ErrorKind::domain, "PC prior needs sigma > 0");
  const double rate = prior.rate();
  return std::log(rate) - rate * sigma;
}

double normal_logpdf(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance)) - 0.5 * r * r / variance;
}

double chi_square_logpdf(double x, double dof) {
  if (!(x > 0.0) || !(dof > 0.0))
    throw error(ErrorKind::domain, "chi-square density needs x > 0 and dof > 0");
  const double h = 0.5 * dof;
  return (h - 1.0) * std::log(x) - 0.5 * x - h * std::numbers::ln2 -
         std::lgamma(h);
}

double betabinomial_logpmf(long y, long n, double mean, double rho) {
  if (n < 0 || y < 0 || y > n)
    throw error(ErrorKind::validation, "beta-binomial needs 0 <= y <= n");
  if (!(mean > 0.0 && mean < 1.0) || !(rho > 0.0 && rho < 1.0))
    throw error(ErrorKind::domain, "beta-binomial needs mean and rho in (0,1)");
  const double kappa = (1.0 - rho) / rho;
  const double a = mean * kappa, b = (1.0 - mean) * kappa;
  double lp = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  for (long k = 0; k < y; ++k) lp += std::log(a + k);
  for (long k = 0; k < n - y; ++k) lp += std::log(b + k);
  for (long k = 0; k < n; ++k) lp -= std::log(kappa + k);
  return lp;
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mean_smoothing: return "mean";
    case ModelKind::joint_smoothing: return "joint";
    case ModelKind::betabinomial: return "betabinomial";
  }
  return "mean";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "mean" || text == "mean_smoothing") return ModelKind::mean_smoothing;
  if (text == "joint" || text == "joint_smoothing") return ModelKind::joint_smoothing;
  if (text == "betabinomial" || text == "beta_binomial") return ModelKind::betabinomial;
  throw error(ErrorKind::validation, "unknown model kind '" + text + "'");
}

std::vector<AreaObservation> area_observations(
    std::span<const design::DirectEstimate> direct,
    const spatial::AdjacencyGraph& graph, std::vector<std::string>* excluded) {
  std::vector<AreaObservation> out;
  for (const auto& e : direct) {
    auto node = graph.index_of(e.area_id);
    if (!node)
      throw error(ErrorKind::lookup, "area '" + e.area_id + "' is not in the adjacency graph");
    const bool usable = e.p_hat > 0.0 && e.p_hat < 1.0 && e.has_variance() &&
                        e.v_hat > 0.0 && e.dof > 0.0;
    if (!usable) {
      if (excluded) excluded->push_back(e.area_id);
      continue;
    }
    double n = e.n_effective.value_or(static_cast<double>(e.n_households));
    if (!(n > 0.0)) n = static_cast<double>(e.n_households);
    out.push_back({*node, e.p_hat, e.v_hat, e.dof, n});
  }
  return out;
}

std::vector<ClusterObservation> cluster_observations(
    std::span<const design::ClusterCount> counts,
    const spatial::AdjacencyGraph& graph) {
  std::vector<ClusterObservation> out;
  for (const auto& c : counts) {
    auto node = graph.index_of(c.adm2_id);
    if (!node)
      throw error(ErrorKind::lookup, "cluster '" + c.cluster_id + "' is in area '" +
                                         c.adm2_id + "', which is not in the graph");
    if (c.y < 0 || c.y > c.n)
      throw error(ErrorKind::validation, "cluster '" + c.cluster_id + "' has y > n");
    out.push_back({*node, c.y, c.n, c.stratum == survey::Stratum::urban});
  }
  return out;
}

// ---------------------------------------------------------------------------
// BYM2 block

Bym2Block::Bym2Block(const spatial::AdjacencyGraph& graph,
                     const spatial::Bym2Scaling& scaling, std::size_t beta0,
                     std::size_t log_sigma, std::size_t logit_phi,
                     std::size_t u1, std::size_t u2)
    : graph_(&graph), scaling_(&scaling), beta0_(beta0), log_sigma_(log_sigma),
      logit_phi_(logit_phi), u1_(u1), u2_(u2),
      structured_scale_(graph.size()) {
  if (scaling.node_alpha.size() != graph.size())
    throw error(ErrorKind::misuse, "scaling was computed for a different graph");
  for (std::size_t i = 0; i < graph.size(); ++i)
    structured_scale_[i] = graph.is_singleton(i) ? 0.0 : 1.0 / scaling.node_alpha[i];
}

void Bym2Block::field(double sigma, double phi, std::span<const double> u1,
                      std::span<const double> u2, std::span<double> u) const {
  const double a = sigma * std::sqrt(1.0 - phi), b = sigma * std::sqrt(phi);
  for (std::size_t i = 0; i < areas(); ++i)
    u[i] = a * u1[i] + b * structured_scale_[i] * u2[i];
}

void Bym2Block::field(std::span<const double> x, std::span<double> u) const {
  field(std::exp(x[log_sigma_]), inv_logit(x[logit_phi_]), x.subspan(u1_, areas()),
        x.subspan(u2_, areas()), u);
}

void Bym2Block::backprop(std::span<const double> x, std::span<const double> u,
                         std::span<const double> d_eta,
                         std::span<double> grad) const {
  const std::size_t n = areas();
  const double sigma = std::exp(x[log_sigma_]);
  const double phi = inv_logit(x[logit_phi_]);
  const double s1 = std::sqrt(1.0 - phi), s2 = std::sqrt(phi);
  const auto u1 = x.subspan(u1_, n), u2 = x.subspan(u2_, n);

  grad[beta0_] += kernels::sum(d_eta);
  grad[log_sigma_] += kernels::dot(d_eta, u);
  double d_phi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = d_eta[i];
    if (d == 0.0) continue;
    const double s = structured_scale_[i];
    d_phi += d * sigma * (-0.5 * u1[i] * phi * s1 + 0.5 * s * u2[i] * (1.0 - phi) * s2);
    grad[u1_ + i] += d * sigma * s1;
    grad[u2_ + i] += d * sigma * s2 * s;
  }
  grad[logit_phi_] += d_phi;
}

double Bym2Block::log_prior(std::span<const double> x, const PriorConfig& priors,
                            std::span<double> grad) const {
  const std::size_t n = areas();
  double lp = 0.0;

  const double b0 = x[beta0_];
  lp += normal_logpdf(b0, 0.0, priors.coef_variance);
  grad[beta0_] += -b0 / priors.coef_variance;

  // sigma_u = exp(s): PC prior plus log Jacobian s.
  const double s = x[log_sigma_], sigma = std::exp(s);
  const double rate = priors.sigma_u.rate();
  lp += std::log(rate) - rate * sigma + s;
  grad[log_sigma_] += 1.0 - rate * sigma;

  // phi = inv_logit(t): Beta(a, b) prior plus log Jacobian log phi(1-phi).
  const double t = x[logit_phi_], phi = inv_logit(t);
  lp += priors.phi_a * log_inv_logit(t) + priors.phi_b * log1m_inv_logit(t) -
        (std::lgamma(priors.phi_a) + std::lgamma(priors.phi_b) -
         std::lgamma(priors.phi_a + priors.phi_b));
  grad[logit_phi_] += priors.phi_a * (1.0 - phi) - priors.phi_b * phi;

  const auto u1 = x.subspan(u1_, n), u2 = x.subspan(u2_, n);
  lp += -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * kernels::dot(u1, u1);
  kernels::axpy(-1.0, u1, grad.subspan(u1_, n));

  // ICAR: -1/2 sum over edges (u2_i - u2_j)^2.
  lp += -0.5 * spatial::icar_quadratic(u2, *graph_);
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0.0;
    for (std::size_t j : graph_->neighbors(i)) g -= u2[i] - u2[j];
    grad[u2_ + i] += g;
  }

  for (const auto& members : graph_->components()) {
    if (members.size() == 1) {
      // Unused by the predictor; standard normal keeps the posterior proper.
      const std::size_t i = members.front();
      lp += normal_logpdf(u2[i], 0.0, 1.0);
      grad[u2_ + i] += -u2[i];
      continue;
    }
    // Soft sum-to-zero: component mean ~ N(0, (scale * size)^2).
    const double k = static_cast<double>(members.size());
    const double sd = priors.sum_to_zero_scale * k;
    double mean = 0.0;
    for (std::size_t i : members) mean += u2[i];
    mean /= k;
    lp += normal_logpdf(mean, 0.0, sd * sd);
    const double g = -mean / (sd * sd) / k;
    for (std::size_t i : members) grad[u2_ + i] += g;
  }
  return lp;
}

// ---------------------------------------------------------------------------

AreaModel::AreaModel(ModelKind kind, const spatial::AdjacencyGraph& graph,
                     const spatial::Bym2Scaling& scaling, PriorConfig priors)
    : kind_(kind), graph_(&graph), scaling_(&scaling), priors_(priors) {
  priors_.validate();
}

namespace {

std::vector<std::string> bym2_names(const spatial::AdjacencyGraph& graph) {
  std::vector<std::string> names;
  for (const auto& id : graph.nodes()) names.push_back("u1[" + id + "]");
  for (const auto& id : graph.nodes()) names.push_back("u2[" + id + "]");
  return names;
}

void check_area_data(std::span<const AreaObservation> data,
                     const spatial::AdjacencyGraph& graph, bool need_dof) {
  for (const auto& d : data) {
    if (d.node >= graph.size())
      throw error(ErrorKind::misuse, "area observation refers to a missing node");
    if (!(d.v_hat > 0.0))
      throw error(ErrorKind::validation,
                  "area '" + graph.nodes()[d.node] + "' needs v_hat > 0");
    if (need_dof && !(d.dof > 0.0))
      throw error(ErrorKind::validation,
                  "area '" + graph.nodes()[d.node] + "' needs dof > 0");
    if (need_dof && !(d.n > 0.0))
      throw error(ErrorKind::validation,
                  "area '" + graph.nodes()[d.node] + "' needs a positive sample size");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Mean smoothing: [beta0, log sigma_u, logit phi, u1(L), u2(L)]

MeanSmoothingModel::MeanSmoothingModel(std::vector<AreaObservation> data,
                                       const spatial::AdjacencyGraph& graph,
                                       const spatial::Bym2Scaling& scaling,
                                       PriorConfig priors)
    : AreaModel(ModelKind::mean_smoothing, graph, scaling, priors),
      data_(std::move(data)),
      block_(graph, scaling, 0, 1, 2, 3, 3 + graph.size()) {
  check_area_data(data_, graph, false);
}

std::size_t MeanSmoothingModel::dimension() const { return 3 + 2 * graph_->size(); }

double MeanSmoothingModel::log_likelihood(std::span<const double> x) const {
  auto& u = scratch<double>(0, graph_->size());
  block_.field(x, u);
  double ll = 0.0;
  for (const auto& d : data_) {
    const double p = inv_logit(x[block_.beta0()] + u[d.node]);
    ll += normal_logpdf(d.p_hat, p, d.v_hat);
  }
  return ll;
}

double MeanSmoothingModel::log_density(std::span<const double> x,
                                       std::span<double> grad) const {
  const std::size_t n = graph_->size();
  std::fill(grad.begin(), grad.end(), 0.0);
  const double prior = block_.log_prior(x, priors_, grad);
  check_finite(prior, "prior");

  auto& u = scratch<double>(0, n);
  auto& d_eta = scratch<double>(1, n);
  block_.field(x, u);
  const double beta0 = x[block_.beta0()];
  double ll = 0.0;
  for (const auto& d : data_) {
    const double p = inv_logit(beta0 + u[d.node]);
    const double r = d.p_hat - p;
    ll += -0.5 * (kLog2Pi + std::log(d.v_hat)) - 0.5 * r * r / d.v_hat;
    d_eta[d.node] += r / d.v_hat * p * (1.0 - p);
  }
  check_finite(ll, "direct-estimate likelihood");
  block_.backprop(x, u, d_eta, grad);
  return prior + ll;
}

std::vector<std::string> MeanSmoothingModel::parameter_names() const {
  std::vector<std::string> names{"beta0", "sigma_u", "phi"};
  auto rest = bym2_names(*graph_);
  names.insert(names.end(), rest.begin(), rest.end());
  return names;
}

void MeanSmoothingModel::constrain(std::span<const double> x,
                                   std::span<double> out) const {
  std::copy(x.begin(), x.end(), out.begin());
  out[1] = std::exp(x[1]);
  out[2] = inv_logit(x[2]);
}

AreaModel::ConstrainedLayout MeanSmoothingModel::constrained_layout() const {
  return {0, 1, 2, 3, 3 + graph_->size(), std::nullopt};
}

namespace {

void bym2_prevalence(const Bym2Block& block, const AreaModel::ConstrainedLayout& l,
                     std::span<const double> c, std::span<double> p) {
  const std::size_t n = block.areas();
  std::vector<double> u(n);
  block.field(c[l.sigma_u], c[l.phi], c.subspan(l.u1, n), c.subspan(l.u2, n), u);
  for (std::size_t i = 0; i < n; ++i) p[i] = inv_logit(c[l.beta0] + u[i]);
}

}  // namespace

void MeanSmoothingModel::area_prevalence(std::span<const double> constrained,
                                         std::span<const double>,
                                         std::span<double> p, std::span<double>,
                                         std::span<double>) const {
  bym2_prevalence(block_, constrained_layout(), constrained, p);
}

// ---------------------------------------------------------------------------
// Joint smoothing: mean layout followed by
// [gamma0, gamma1, gamma2, log sigma_tau, tau_raw(L)], tau = sigma_tau tau_raw.

JointSmoothingModel::JointSmoothingModel(std::vector<AreaObservation> data,
                                         const spatial::AdjacencyGraph& graph,
                                         const spatial::Bym2Scaling& scaling,
                                         PriorConfig priors)
    : AreaModel(ModelKind::joint_smoothing, graph, scaling, priors),
      data_(std::move(data)),
      block_(graph, scaling, 0, 1, 2, 3, 3 + graph.size()) {
  check_area_data(data_, graph, true);
  gamma0_ = 3 + 2 * graph.size();
  gamma1_ = gamma0_ + 1;
  gamma2_ = gamma0_ + 2;
  log_sigma_tau_ = gamma0_ + 3;
  tau_ = gamma0_ + 4;
}

std::size_t JointSmoothingModel::dimension() const { return tau_ + graph_->size(); }

double JointSmoothingModel::sampling_variance(double p, double n, double gamma0,
                                              double gamma1, double gamma2,
                                              double tau) {
  return std::exp(gamma0 + gamma1 * std::log(p * (1.0 - p)) + gamma2 * std::log(n) + tau);
}

double JointSmoothingModel::log_density(std::span<const double> x,
                                        std::span<double> grad) const {
  const std::size_t n = graph_->size();
  std::fill(grad.begin(), grad.end(), 0.0);
  double prior = block_.log_prior(x, priors_, grad);

  const double g0 = x[gamma0_], g1 = x[gamma1_], g2 = x[gamma2_];
  const NormalPrior* gp[3] = {&priors_.gamma0, &priors_.gamma1, &priors_.gamma2};
  const std::size_t gi[3] = {gamma0_, gamma1_, gamma2_};
  for (int k = 0; k < 3; ++k) {
    const double v = gp[k]->sd * gp[k]->sd;
    prior += normal_logpdf(x[gi[k]], gp[k]->mean, v);
    grad[gi[k]] += -(x[gi[k]] - gp[k]->mean) / v;
  }
  const double st = x[log_sigma_tau_], sigma_tau = std::exp(st);
  const double rate = priors_.sigma_tau.rate();
  prior += std::log(rate) - rate * sigma_tau + st;
  grad[log_sigma_tau_] += 1.0 - rate * sigma_tau;
  const auto tau_raw = x.subspan(tau_, n);
  for (std::size_t i = 0; i < n; ++i) {
    prior += normal_logpdf(tau_raw[i], 0.0, 1.0);
    grad[tau_ + i] += -tau_raw[i];
  }
  check_finite(prior, "prior");

  auto& u = scratch<double>(0, n);
  auto& d_eta = scratch<double>(1, n);
  block_.field(x, u);
  const double beta0 = x[block_.beta0()];
  double ll_mean = 0.0, ll_var = 0.0;
  for (const auto& d : data_) {
    const double eta = beta0 + u[d.node];
    const double p = inv_logit(eta);
    const double log_pq = log_inv_logit(eta) + log1m_inv_logit(eta);
    const double log_n = std::log(d.n);
    const double lv = g0 + g1 * log_pq + g2 * log_n + sigma_tau * tau_raw[d.node];
    const double v = std::exp(lv);
    const double r = d.p_hat - p;

    ll_mean += -0.5 * (kLog2Pi + lv) - 0.5 * r * r / v;

    // dof * v_hat / V ~ chi2(dof), with the Jacobian dof / V for v_hat.
    const double h = 0.5 * d.dof;
    const double ratio = d.dof * d.v_hat / v;
    ll_var += (h - 1.0) * std::log(ratio) - 0.5 * ratio - h * std::numbers::ln2 -
              std::lgamma(h) + std::log(d.dof) - lv;

    const double d_lv = (-0.5 + 0.5 * r * r / v) + (-h + 0.5 * ratio);
    grad[gamma0_] += d_lv;
    grad[gamma1_] += d_lv * log_pq;
    grad[gamma2_] += d_lv * log_n;
    grad[tau_ + d.node] += d_lv * sigma_tau;
    grad[log_sigma_tau_] += d_lv * sigma_tau * tau_raw[d.node];
    d_eta[d.node] += r / v * p * (1.0 - p) + d_lv * g1 * (1.0 - 2.0 * p);
  }
  check_finite(ll_mean, "direct-estimate likelihood");
  check_finite(ll_var, "sampling-variance likelihood");
  block_.backprop(x, u, d_eta, grad);
  return prior + ll_mean + ll_var;
}

std::vector<std::string> JointSmoothingModel::parameter_names() const {
  std::vector<std::string> names{"beta0", "sigma_u", "phi"};
  auto rest = bym2_names(*graph_);
  names.insert(names.end(), rest.begin(), rest.end());
  for (const char* s : {"gamma0", "gamma1", "gamma2", "sigma_tau"}) names.emplace_back(s);
  for (const auto& id : graph_->nodes()) names.push_back("tau[" + id + "]");
  return names;
}

void JointSmoothingModel::constrain(std::span<const double> x,
                                    std::span<double> out) const {
  std::copy(x.begin(), x.end(), out.begin());
  out[1] = std::exp(x[1]);
  out[2] = inv_logit(x[2]);
  const double sigma_tau = std::exp(x[log_sigma_tau_]);
  out[log_sigma_tau_] = sigma_tau;
  for (std::size_t i = 0; i < graph_->size(); ++i) out[tau_ + i] = sigma_tau * x[tau_ + i];
}

AreaModel::ConstrainedLayout JointSmoothingModel::constrained_layout() const {
  return {0, 1, 2, 3, 3 + graph_->size(), std::nullopt};
}

void JointSmoothingModel::area_prevalence(std::span<const double> constrained,
                                          std::span<const double>,
                                          std::span<double> p, std::span<double>,
                                          std::span<double>) const {
  bym2_prevalence(block_, constrained_layout(), constrained, p);
}

// ---------------------------------------------------------------------------
// Beta-binomial: [beta0, beta_urban, log sigma_u, logit phi, logit rho,
// u1(L), u2(L)]

BetaBinomialModel::BetaBinomialModel(std::vector<ClusterObservation> data,
                                     const spatial::AdjacencyGraph& graph,
                                     const spatial::Bym2Scaling& scaling,
                                     PriorConfig priors)
    : AreaModel(ModelKind::betabinomial, graph, scaling, priors),
      data_(std::move(data)),
      block_(graph, scaling, 0, 2, 3, 5, 5 + graph.size()),
      beta_urban_(1),
      logit_rho_(4) {
  for (const auto& c : data_) {
    if (c.node >= graph.size())
      throw error(ErrorKind::misuse, "cluster observation refers to a missing node");
    if (c.y < 0 || c.y > c.n)
      throw error(ErrorKind::validation, "cluster count y exceeds n");
  }
  // Identical clusters contribute identical terms; evaluate each once.
  std::map<std::tuple<std::size_t, bool, long, long>, double> groups;
  std::map<long, double> ns;
  for (const auto& c : data_) {
    groups[{c.node, c.urban, c.y, c.n}] += 1.0;
    ns[c.n] += 1.0;
    log_binom_ += std::lgamma(c.n + 1.0) - std::lgamma(c.y + 1.0) - std::lgamma(c.n - c.y + 1.0);
  }
  for (const auto& [key, count] : groups) {
    const auto& [node, urban, y, n] = key;
    groups_.push_back({node, urban, y, n, count});
  }
  n_counts_.assign(ns.begin(), ns.end());
}

std::size_t BetaBinomialModel::dimension() const { return 5 + 2 * graph_->size(); }

namespace {

// log of a(a+1)...(a+m-1) and its derivative in a. Logs are taken of short
// products to save calls to log.
std::pair<double, double> log_rising(double a, long m) {
  double log_sum = 0.0, inv_sum = 0.0, prod = 1.0;
  for (long k = 0; k < m; ++k) {
    const double t = a + k;
    prod *= t;
    inv_sum += 1.0 / t;
    if ((k & 7) == 7) {
      log_sum += std::log(prod);
      prod = 1.0;
    }
  }
  return {log_sum + std::log(prod), inv_sum};
}

}  // namespace

double BetaBinomialModel::log_density(std::span<const double> x,
                                      std::span<double> grad) const {
  const std::size_t n_areas = graph_->size();
  std::fill(grad.begin(), grad.end(), 0.0);
  double prior = block_.log_prior(x, priors_, grad);

  const double beta = x[beta_urban_];
  prior += normal_logpdf(beta, 0.0, priors_.coef_variance);
  grad[beta_urban_] += -beta / priors_.coef_variance;

  // rho = inv_logit(r) with a uniform prior: only the Jacobian remains.
  const double r = x[logit_rho_];
  const double rho = inv_logit(r);
  prior += log_inv_logit(r) + log1m_inv_logit(r);
  grad[logit_rho_] += 1.0 - 2.0 * rho;
  check_finite(prior, "prior");

  auto& u = scratch<double>(0, n_areas);
  auto& d_eta = scratch<double>(1, n_areas);
  block_.field(x, u);
  const double beta0 = x[block_.beta0()];
  const double kappa = std::exp(-r);  // (1 - rho) / rho
  double ll = log_binom_, d_kappa = 0.0, d_beta = 0.0;
  for (const auto& [n, count] : n_counts_) {
    const auto [lk, dk] = log_rising(kappa, n);
    ll -= count * lk;
    d_kappa -= count * dk;
  }
  for (const auto& g : groups_) {
    const double eta = beta0 + (g.urban ? beta : 0.0) + u[g.node];
    const double mu = inv_logit(eta);
    const auto [la, da] = log_rising(mu * kappa, g.y);
    const auto [lb, db] = log_rising((1.0 - mu) * kappa, g.n - g.y);
    ll += g.count * (la + lb);
    const double g_eta = g.count * kappa * mu * (1.0 - mu) * (da - db);
    d_eta[g.node] += g_eta;
    if (g.urban) d_beta += g_eta;
    d_kappa += g.count * (mu * da + (1.0 - mu) * db);
  }
  check_finite(ll, "beta-binomial likelihood");
  grad[beta_urban_] += d_beta;
  grad[logit_rho_] += -kappa * d_kappa;
  block_.backprop(x, u, d_eta, grad);
  return prior + ll;
}

std::vector<std::string> BetaBinomialModel::parameter_names() const {
  std::vector<std::string> names{"beta0", "beta_urban", "sigma_u", "phi", "rho"};
  auto rest = bym2_names(*graph_);
  names.insert(names.end(), rest.begin(), rest.end());
  return names;
}

void BetaBinomialModel::constrain(std::span<const double> x,
                                  std::span<double> out) const {
  std::copy(x.begin(), x.end(), out.begin());
  out[2] = std::exp(x[2]);
  out[3] = inv_logit(x[3]);
  out[4] = inv_logit(x[4]);
}

AreaModel::ConstrainedLayout BetaBinomialModel::constrained_layout() const {
  return {0, 2, 3, 5, 5 + graph_->size(), std::size_t{1}};
}

void BetaBinomialModel::area_prevalence(std::span<const double> constrained,
                                        std::span<const double> urban_share,
                                        std::span<double> p, std::span<double> urban,
                                        std::span<double> rural) const {
  const auto l = constrained_layout();
  const std::size_t n = graph_->size();
  std::vector<double> u(n);
  block_.field(constrained[l.sigma_u], constrained[l.phi],
               constrained.subspan(l.u1, n), constrained.subspan(l.u2, n), u);
  const double beta0 = constrained[l.beta0], beta = constrained[*l.beta_urban];
  for (std::size_t i = 0; i < n; ++i) {
    const double pu = inv_logit(beta0 + beta + u[i]);
    const double pr = inv_logit(beta0 + u[i]);
    const double q = urban_share[i];
    p[i] = q * pu + (1.0 - q) * pr;
    if (!urban.empty()) urban[i] = pu;
    if (!rural.empty()) rural[i] = pr;
  }
}

// ---------------------------------------------------------------------------

AreaPrevalenceDraws prevalence_from_draws(std::span<const double> constrained_draws,
                                          const AreaModel& model,
                                          const survey::AreaTable* areas) {
  const auto& graph = model.graph();
  const std::size_t width = model.constrained_dimension();
  const std::size_t n = graph.size();
  if (width == 0 || constrained_draws.size() % width != 0)
    throw error(ErrorKind::misuse, "draw matrix width does not match the model");

  std::vector<double> q(n, 0.0);
  const bool bb = model.kind() == ModelKind::betabinomial;
  if (bb) {
    std::string missing;
    for (std::size_t i = 0; i < n; ++i) {
      const survey::AreaInfo* a = areas ? areas->find(graph.nodes()[i]) : nullptr;
      if (!a || !a->urban_proportion)
        missing += (missing.empty() ? "" : ", ") + graph.nodes()[i];
      else
        q[i] = *a->urban_proportion;
    }
    if (!missing.empty())
      throw error(ErrorKind::lookup, "urban proportion missing for areas: " + missing);
  }

  AreaPrevalenceDraws out;
  out.areas = graph.nodes();
  out.draws = constrained_draws.size() / width;
  out.p.resize(out.draws * n);
  if (bb) {
    out.urban.resize(out.draws * n);
    out.rural.resize(out.draws * n);
  }
  for (std::size_t d = 0; d < out.draws; ++d) {
    std::span<double> urban, rural;
    if (bb) {
      urban = std::span<double>(out.urban).subspan(d * n, n);
      rural = std::span<double>(out.rural).subspan(d * n, n);
    }
    model.area_prevalence(constrained_draws.subspan(d * width, width), q,
                          std::span<double>(out.p).subspan(d * n, n), urban, rural);
  }
  return out;
}

Adm1Draws aggregate_to_adm1(const AreaPrevalenceDraws& draws,
                            const survey::AreaTable& areas) {
  Adm1Draws out;
  out.draws = draws.draws;
  std::unordered_map<std::string, std::size_t> adm1_index;
  std::vector<std::size_t> owner(draws.areas.size());
  std::vector<double> pop(draws.areas.size());
  for (std::size_t i = 0; i < draws.areas.size(); ++i) {
    const survey::AreaInfo* a = areas.find(draws.areas[i]);
    if (!a)
      throw error(ErrorKind::lookup, "no population for area '" + draws.areas[i] + "'");
    auto [it, inserted] = adm1_index.emplace(a->adm1_id, out.adm1_ids.size());
    if (inserted) out.adm1_ids.push_back(a->adm1_id);
    owner[i] = it->second;
    pop[i] = a->population;
  }
  const std::size_t m = out.adm1_ids.size(), n = draws.areas.size();
  std::vector<double> total(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) total[owner[i]] += pop[i];
  for (std::size_t k = 0; k < m; ++k)
    if (!(total[k] > 0.0))
      throw error(ErrorKind::domain,
                  "ADM1 '" + out.adm1_ids[k] + "' has zero total population");

  out.p.assign(out.draws * m, 0.0);
  for (std::size_t d = 0; d < out.draws; ++d)
    for (std::size_t i = 0; i < n; ++i)
      out.p[d * m + owner[i]] += pop[i] * draws.p[d * n + i] / total[owner[i]];
  return out;
}

}  // namespace sae::models
