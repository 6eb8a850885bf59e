#include "sae/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include <boost/math/special_functions/erf.hpp>
#include <nlohmann/json.hpp>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/rng.hpp"

namespace sae::inference {

namespace {

constexpr const char* kModule = "inference";
constexpr double kMaxDeltaH = 1000.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Streams are keyed by (seed, chain, iteration, purpose).
enum Purpose : std::uint64_t { kInit = 1, kStepInit = 2, kTransition = 3 };

struct Point {
  std::vector<double> q, p, grad;
  double lp = 0.0;
};

class Chain {
 public:
  Chain(const LogDensity& target, const SamplerConfig& config, std::size_t chain)
      : target_(target), config_(config), chain_(chain), n_(target.dimension()),
        inv_metric_(n_, 1.0) {
    z_.q.resize(n_);
    z_.p.resize(n_);
    z_.grad.resize(n_);
  }

  void initialize() {
    for (int attempt = 0; attempt < 100; ++attempt) {
      KeyedStream rng{config_.seed, chain_, static_cast<std::uint64_t>(attempt), kInit};
      for (auto& v : z_.q) v = rng.uniform(-config_.init_radius, config_.init_radius);
      if (evaluate(z_) && std::all_of(z_.grad.begin(), z_.grad.end(),
                                      [](double g) { return std::isfinite(g); }))
        return;
    }
    throw error(ErrorKind::numerical,
                "chain " + std::to_string(chain_) +
                    ": initialization failed, log density not finite after 100 attempts");
  }

  void run(PosteriorDraws& out) {
    initialize();
    const int warmup = config_.warmup;
    step_ = 1.0;
    init_step_size(0);
    set_mu();

    // Windowed adaptation of the diagonal metric.
    int init_buffer = 75, term_buffer = 50, base_window = 25;
    const bool adapt_metric = warmup >= 20;
    if (init_buffer + term_buffer + base_window > warmup) {
      init_buffer = static_cast<int>(0.15 * warmup);
      term_buffer = static_cast<int>(0.1 * warmup);
      base_window = warmup - (init_buffer + term_buffer);
    }
    int window_size = base_window;
    int next_window = init_buffer + base_window - 1;
    const int last_window_end = warmup - term_buffer - 1;
    std::vector<double> mean(n_, 0.0), m2(n_, 0.0);
    long window_count = 0;

    const std::size_t total = static_cast<std::size_t>(warmup + config_.samples);
    for (std::size_t it = 0; it < total; ++it) {
      const Transition t = transition(it);
      const int counter = static_cast<int>(it);
      if (counter < warmup) {
        learn_step_size(t.accept_stat);
        if (adapt_metric) {
          if (counter >= init_buffer && counter < warmup - term_buffer) {
            ++window_count;
            for (std::size_t i = 0; i < n_; ++i) {
              const double d = z_.q[i] - mean[i];
              mean[i] += d / static_cast<double>(window_count);
              m2[i] += d * (z_.q[i] - mean[i]);
            }
          }
          if (counter == next_window) {
            if (next_window != last_window_end) {
              window_size *= 2;
              next_window = counter + window_size;
              if (next_window != last_window_end &&
                  next_window + 2 * window_size >= warmup - term_buffer)
                next_window = last_window_end;
            }
            const double nn = static_cast<double>(window_count);
            for (std::size_t i = 0; i < n_; ++i) {
              const double var = m2[i] / (nn - 1.0);
              inv_metric_[i] = (nn / (nn + 5.0)) * var + 1e-3 * (5.0 / (nn + 5.0));
            }
            std::fill(mean.begin(), mean.end(), 0.0);
            std::fill(m2.begin(), m2.end(), 0.0);
            window_count = 0;
            init_step_size(it + 1);
            set_mu();
          }
        }
        if (counter == warmup - 1) step_ = std::exp(x_bar_);
        continue;
      }
      const std::size_t s = it - static_cast<std::size_t>(warmup);
      const std::size_t row = chain_ * out.iterations + s;
      target_.constrain(z_.q, std::span<double>(out.values).subspan(
                                  row * out.names.size(), out.names.size()));
      out.divergent[row] = t.divergent;
      out.tree_depth[row] = static_cast<std::uint8_t>(t.depth);
      out.log_density[row] = z_.lp;
      out.accept_stat[row] = t.accept_stat;
    }
    out.step_size[chain_] = step_;
    out.inverse_metric[chain_] = inv_metric_;
  }

 private:
  struct Transition {
    double accept_stat = 0.0;
    int depth = 0;
    bool divergent = false;
  };

  // Returns false when the density or gradient could not be evaluated.
  bool evaluate(Point& z) {
    try {
      z.lp = target_.log_density(z.q, z.grad);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical && e.kind() != ErrorKind::domain) throw;
      z.lp = -kInf;
    }
    return std::isfinite(z.lp);
  }

  double hamiltonian(const Point& z) const {
    double k = 0.0;
    for (std::size_t i = 0; i < n_; ++i) k += z.p[i] * z.p[i] * inv_metric_[i];
    const double h = -z.lp + 0.5 * k;
    return std::isnan(h) ? kInf : h;
  }

  void sharp(const std::vector<double>& p, std::vector<double>& out) const {
    for (std::size_t i = 0; i < n_; ++i) out[i] = inv_metric_[i] * p[i];
  }

  void sample_momentum(KeyedStream& rng, Point& z) const {
    for (std::size_t i = 0; i < n_; ++i) z.p[i] = rng.normal() / std::sqrt(inv_metric_[i]);
  }

  void evolve(Point& z, double eps) {
    if (!std::isfinite(z.lp)) return;
    for (std::size_t i = 0; i < n_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < n_; ++i) z.q[i] += eps * inv_metric_[i] * z.p[i];
    if (!evaluate(z)) return;
    for (std::size_t i = 0; i < n_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

  void init_step_size(std::size_t iteration) {
    KeyedStream rng{config_.seed, chain_, iteration, kStepInit};
    const Point start = z_;
    Point z = start;
    sample_momentum(rng, z);
    double h0 = hamiltonian(z);
    evolve(z, step_);
    double delta = h0 - hamiltonian(z);
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (int guard = 0; guard < 200; ++guard) {
      z = start;
      sample_momentum(rng, z);
      h0 = hamiltonian(z);
      evolve(z, step_);
      delta = h0 - hamiltonian(z);
      if (direction == 1 && !(delta > std::log(0.8))) break;
      if (direction == -1 && !(delta < std::log(0.8))) break;
      step_ = direction == 1 ? 2.0 * step_ : 0.5 * step_;
      if (step_ > 1e7)
        throw error(ErrorKind::numerical, "step size diverged; the posterior may be improper");
      if (step_ == 0.0)
        throw error(ErrorKind::numerical, "step size collapsed to zero");
    }
  }

  void set_mu() {
    mu_ = std::log(10.0 * step_);
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  // Dual averaging, gamma 0.05, t0 10, kappa 0.75.
  void learn_step_size(double accept) {
    counter_ += 1.0;
    accept = std::min(1.0, accept);
    const double eta = 1.0 / (counter_ + 10.0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (config_.target_accept - accept);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / 0.05;
    const double x_eta = std::pow(counter_, -0.75);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    step_ = std::exp(x);
  }

  static bool no_u_turn(const std::vector<double>& p_sharp_minus,
                        const std::vector<double>& p_sharp_plus,
                        const std::vector<double>& rho) {
    return dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0;
  }

  static void add(std::vector<double>& out, const std::vector<double>& a,
                  const std::vector<double>& b) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  }

  struct TreeState {
    double h0 = 0.0;
    double sign = 1.0;
    long n_leapfrog = 0;
    double sum_metro = 0.0;
    bool divergent = false;
    KeyedStream* rng = nullptr;
  };

  bool build_tree(int depth, Point& z, Point& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end,
                  double& log_sum_weight, TreeState& st) {
    if (depth == 0) {
      evolve(z, st.sign * step_);
      ++st.n_leapfrog;
      const double h = std::isfinite(z.lp) ? hamiltonian(z) : kInf;
      if (h - st.h0 > kMaxDeltaH) st.divergent = true;
      log_sum_weight = log_sum_exp(log_sum_weight, st.h0 - h);
      st.sum_metro += st.h0 - h > 0.0 ? 1.0 : std::exp(st.h0 - h);
      z_propose = z;
      sharp(z.p, p_sharp_beg);
      p_sharp_end = p_sharp_beg;
      for (std::size_t i = 0; i < n_; ++i) rho[i] += z.p[i];
      p_beg = z.p;
      p_end = p_beg;
      return !st.divergent;
    }

    double lsw_init = -kInf;
    std::vector<double> p_init_end(n_), p_sharp_init_end(n_), rho_init(n_, 0.0);
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init,
                    p_beg, p_init_end, lsw_init, st))
      return false;

    Point z_propose_final = z;
    double lsw_final = -kInf;
    std::vector<double> p_final_beg(n_), p_sharp_final_beg(n_), rho_final(n_, 0.0);
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end,
                    rho_final, p_final_beg, p_end, lsw_final, st))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (st.rng->uniform() < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    std::vector<double> rho_subtree(n_), rho_extended(n_);
    add(rho_subtree, rho_init, rho_final);
    for (std::size_t i = 0; i < n_; ++i) rho[i] += rho_subtree[i];
    bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    add(rho_extended, rho_init, p_final_beg);
    persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_extended);
    add(rho_extended, rho_final, p_init_end);
    persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  Transition transition(std::size_t iteration) {
    KeyedStream rng{config_.seed, chain_, iteration, kTransition};
    sample_momentum(rng, z_);

    Point z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;
    std::vector<double> p_sharp(n_);
    sharp(z_.p, p_sharp);
    std::vector<double> p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp;
    std::vector<double> p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp;
    std::vector<double> p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp;
    std::vector<double> p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp;
    std::vector<double> rho = z_.p, rho_fwd(n_), rho_bck(n_), rho_extended(n_);

    TreeState st;
    st.h0 = hamiltonian(z_);
    st.rng = &rng;
    double log_sum_weight = 0.0;
    int depth = 0;

    while (depth < config_.max_tree_depth) {
      std::fill(rho_fwd.begin(), rho_fwd.end(), 0.0);
      std::fill(rho_bck.begin(), rho_bck.end(), 0.0);
      bool valid = false;
      double lsw_subtree = -kInf;
      if (rng.uniform() > 0.5) {
        Point z = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        st.sign = 1.0;
        valid = build_tree(depth, z, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                           p_fwd_bck, p_fwd_fwd, lsw_subtree, st);
        z_fwd = std::move(z);
      } else {
        Point z = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        st.sign = -1.0;
        valid = build_tree(depth, z, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                           p_bck_fwd, p_bck_bck, lsw_subtree, st);
        z_bck = std::move(z);
      }
      if (!valid) break;
      ++depth;

      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng.uniform() < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

      add(rho, rho_bck, rho_fwd);
      bool persist = no_u_turn(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      add(rho_extended, rho_bck, p_fwd_bck);
      persist = persist && no_u_turn(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      add(rho_extended, rho_fwd, p_bck_fwd);
      persist = persist && no_u_turn(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }

    Transition t;
    t.depth = depth;
    t.divergent = st.divergent;
    t.accept_stat = st.n_leapfrog > 0 ? st.sum_metro / static_cast<double>(st.n_leapfrog) : 0.0;
    z_ = std::move(z_sample);
    return t;
  }

  const LogDensity& target_;
  const SamplerConfig& config_;
  std::size_t chain_;
  std::size_t n_;
  std::vector<double> inv_metric_;
  Point z_;
  double step_ = 1.0;
  double mu_ = 0.0, counter_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
};

int thread_count(const SamplerConfig& config) {
  int threads = config.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("SAE_THREADS")) threads = std::atoi(env);
  }
  if (threads <= 0) threads = config.chains;
  return std::max(1, std::min(threads, config.chains));
}

// Normal scores of pooled ranks (average ranks for ties).
std::vector<double> rank_normalize(std::span<const double> x) {
  const std::size_t s = x.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> z(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double u = (rank - 0.375) / (static_cast<double>(s) + 0.25);
    const double score = std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
    for (std::size_t k = i; k <= j; ++k) z[order[k]] = score;
    i = j + 1;
  }
  return z;
}

// Splits each chain in half, dropping the middle draw of odd-length chains.
std::vector<std::vector<double>> split_chains(std::span<const double> draws,
                                              std::size_t chains) {
  const std::size_t n = draws.size() / chains, half = n / 2;
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < chains; ++c) {
    auto chain = draws.subspan(c * n, n);
    out.emplace_back(chain.begin(), chain.begin() + half);
    out.emplace_back(chain.end() - half, chain.end());
  }
  return out;
}

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double rhat_of(const std::vector<std::vector<double>>& chains) {
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(variance_of(c));
  }
  const double b = n * variance_of(means);
  const double w = mean_of(vars);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

std::vector<std::vector<double>> reshape(const std::vector<double>& pooled,
                                         std::size_t m) {
  const std::size_t n = pooled.size() / m;
  std::vector<std::vector<double>> out(m);
  for (std::size_t c = 0; c < m; ++c)
    out[c].assign(pooled.begin() + static_cast<long>(c * n),
                  pooled.begin() + static_cast<long>((c + 1) * n));
  return out;
}

bool constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

// Geyer initial monotone sequence estimator over several chains.
double ess_of(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size(), n = chains.front().size();
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) means[c] = mean_of(chains[c]);
  auto acov = [&](std::size_t c, std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i)
      s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
    return s / static_cast<double>(n);
  };
  auto mean_acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += acov(c, lag);
    return s / static_cast<double>(m);
  };
  const double nn = static_cast<double>(n);
  const double mean_var = mean_acov(0) * nn / (nn - 1.0);
  double var_plus = mean_var * (nn - 1.0) / nn;
  if (m > 1) var_plus += variance_of(means);

  std::vector<double> rho(n + 2, 0.0);
  double even = 1.0;
  rho[0] = even;
  double odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = odd;
  std::size_t s = 1;
  while (s + 4 < n && even + odd > 0.0) {
    even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (even + odd >= 0.0) {
      rho[s + 1] = even;
      rho[s + 2] = odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (even > 0.0) rho[max_s + 1] = even;
  for (std::size_t t = 1; t + 3 <= max_s; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0 + rho[max_s + 1];
  for (std::size_t t = 0; t < max_s; ++t) tau += 2.0 * rho[t];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains <= 0 || warmup < 0 || samples <= 0 || max_tree_depth <= 0)
    throw error(ErrorKind::validation,
                "chains, samples and max_tree_depth must be positive; warmup non-negative");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw error(ErrorKind::validation, "target_accept must lie in (0,1)");
  if (max_tree_depth > 30)
    throw error(ErrorKind::validation, "max_tree_depth above 30 is not supported");
  if (!(init_radius > 0.0))
    throw error(ErrorKind::validation, "init_radius must be positive");
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"chains", "warmup", "samples",
                                              "target_accept", "max_tree_depth",
                                              "seed", "threads", "init_radius"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw error(ErrorKind::schema, "unknown sampler setting '" + key + "'");
  SamplerConfig c;
  try {
    c.chains = j.value("chains", c.chains);
    c.warmup = j.value("warmup", c.warmup);
    c.samples = j.value("samples", c.samples);
    c.target_accept = j.value("target_accept", c.target_accept);
    c.max_tree_depth = j.value("max_tree_depth", c.max_tree_depth);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.init_radius = j.value("init_radius", c.init_radius);
  } catch (const nlohmann::json::exception& e) {
    throw error(ErrorKind::schema, std::string("sampler config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json SamplerConfig::to_json() const {
  // threads is left out: it changes scheduling, never results.
  return {{"chains", chains},
          {"warmup", warmup},
          {"samples", samples},
          {"target_accept", target_accept},
          {"max_tree_depth", max_tree_depth},
          {"seed", seed},
          {"init_radius", init_radius}};
}

std::vector<double> PosteriorDraws::column(std::size_t param) const {
  std::vector<double> out;
  out.reserve(chains * iterations);
  for (std::size_t c = 0; c < chains; ++c)
    for (std::size_t i = 0; i < iterations; ++i) out.push_back(at(c, i, param));
  return out;
}

std::size_t PosteriorDraws::divergences() const {
  return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
}

std::optional<double> Diagnostics::max_rhat() const {
  std::optional<double> out;
  for (const auto& p : parameters)
    if (p.rhat) out = std::max(out.value_or(0.0), *p.rhat);
  return out;
}

double Diagnostics::min_ess() const {
  double out = kInf;
  for (const auto& p : parameters)
    if (!p.degenerate) out = std::min(out, p.ess_bulk);
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw error(ErrorKind::misuse, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::optional<double> split_rhat(std::span<const double> draws, std::size_t chains) {
  if (chains < 2 || draws.size() % chains != 0 || draws.size() / chains < 4)
    return std::nullopt;
  if (constant(draws)) return std::nullopt;
  // Bulk: rank-normalized; tail: rank-normalized folded draws.
  auto split = split_chains(draws, chains);
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  const double bulk = rhat_of(reshape(rank_normalize(pooled), split.size()));

  std::vector<double> sorted = pooled;
  const double med = quantile(sorted, 0.5);
  std::vector<double> folded(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) folded[i] = std::abs(pooled[i] - med);
  double tail = 1.0;
  if (!constant(folded)) tail = rhat_of(reshape(rank_normalize(folded), split.size()));
  // Values below 1 only mean between-chain spread is under the within-chain
  // spread; they are reported as 1.
  return std::max({bulk, tail, 1.0});
}

std::optional<double> ess_bulk(std::span<const double> draws, std::size_t chains) {
  if (chains == 0 || draws.size() % chains != 0 || draws.size() / chains < 4)
    return std::nullopt;
  if (constant(draws)) return std::nullopt;
  auto split = split_chains(draws, chains);
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  return ess_of(reshape(rank_normalize(pooled), split.size()));
}

Diagnostics diagnose(const PosteriorDraws& draws, int max_tree_depth) {
  Diagnostics d;
  if (draws.chains < 2)
    d.warnings.push_back("R-hat needs at least two chains; not reported");
  if (draws.iterations < 100)
    d.warnings.push_back("fewer than 100 draws per chain; diagnostics are unreliable");
  for (std::size_t k = 0; k < draws.parameters(); ++k) {
    ParameterSummary s;
    s.name = draws.names[k];
    const auto x = draws.column(k);
    s.mean = mean_of(x);
    s.sd = x.size() > 1 ? std::sqrt(variance_of(x)) : 0.0;
    s.q05 = quantile(x, 0.05);
    s.median = quantile(x, 0.5);
    s.q95 = quantile(x, 0.95);
    s.rhat = split_rhat(x, draws.chains);
    auto ess = ess_bulk(x, draws.chains);
    s.degenerate = !ess.has_value();
    s.ess_bulk = ess.value_or(std::numeric_limits<double>::quiet_NaN());
    d.parameters.push_back(std::move(s));
  }
  d.divergences = draws.divergences();
  const double total = static_cast<double>(draws.divergent.size());
  d.divergence_rate = total > 0 ? static_cast<double>(d.divergences) / total : 0.0;
  double depth_sum = 0.0;
  for (auto t : draws.tree_depth) {
    depth_sum += t;
    if (t >= max_tree_depth) ++d.max_depth_hits;
  }
  d.mean_tree_depth = total > 0 ? depth_sum / total : 0.0;
  if (d.divergence_rate > 0.1)
    d.warnings.push_back("divergence rate " + csv::format_number(d.divergence_rate) +
                         " exceeds 10%");
  for (const auto& s : d.parameters)
    if (s.degenerate)
      d.warnings.push_back("parameter '" + s.name + "' is constant; ESS undefined");
  return d;
}

SampleResult sample(const LogDensity& target, const SamplerConfig& config) {
  config.validate();
  const std::size_t dim = target.dimension();
  if (dim == 0) throw error(ErrorKind::misuse, "target has dimension 0");

  PosteriorDraws draws;
  draws.names = target.parameter_names();
  if (draws.names.size() != target.constrained_dimension())
    throw error(ErrorKind::misuse, "parameter names do not match the constrained dimension");
  draws.chains = static_cast<std::size_t>(config.chains);
  draws.iterations = static_cast<std::size_t>(config.samples);
  const std::size_t rows = draws.chains * draws.iterations;
  draws.values.assign(rows * draws.names.size(), 0.0);
  draws.divergent.assign(rows, 0);
  draws.tree_depth.assign(rows, 0);
  draws.log_density.assign(rows, 0.0);
  draws.accept_stat.assign(rows, 0.0);
  draws.step_size.assign(draws.chains, 0.0);
  draws.inverse_metric.assign(draws.chains, {});

  const int threads = thread_count(config);
  std::vector<std::exception_ptr> failures(draws.chains);
  auto worker = [&](int tid) {
    for (std::size_t c = static_cast<std::size_t>(tid); c < draws.chains;
         c += static_cast<std::size_t>(threads)) {
      try {
        Chain chain(target, config, c);
        chain.run(draws);
      } catch (...) {
        failures[c] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);

  SampleResult result;
  result.diagnostics = diagnose(draws, config.max_tree_depth);
  result.draws = std::move(draws);
  return result;
}

GradientReport gradient_check(const LogDensity& target,
                              const std::vector<std::vector<double>>& points,
                              double tolerance) {
  const std::size_t n = target.dimension();
  GradientReport report;
  std::vector<double> grad(n), scratch(n);
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (points[k].size() != n)
      throw error(ErrorKind::misuse, "gradient check point has the wrong dimension");
    std::vector<double> x = points[k];
    target.log_density(x, grad);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      const double xi = x[i];
      x[i] = xi + h;
      const double up = target.log_density(x, scratch);
      x[i] = xi - h;
      const double down = target.log_density(x, scratch);
      x[i] = xi;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(grad[i] - numeric) /
                         std::max({std::abs(grad[i]), std::abs(numeric), 1.0});
      if (rel > report.max_relative_error || std::isnan(rel)) {
        report.max_relative_error = std::isnan(rel) ? kInf : rel;
        report.worst_point = k;
        report.worst_coordinate = i;
      }
      if (!(rel <= tolerance)) report.flagged.emplace_back(k, i);
    }
  }
  return report;
}

double leapfrog(const LogDensity& target, std::span<double> q, std::span<double> p,
                std::span<double> grad, double step,
                std::span<const double> inverse_metric) {
  const std::size_t n = q.size();
  for (std::size_t i = 0; i < n; ++i) p[i] += 0.5 * step * grad[i];
  for (std::size_t i = 0; i < n; ++i) q[i] += step * inverse_metric[i] * p[i];
  const double lp = target.log_density(q, grad);
  for (std::size_t i = 0; i < n; ++i) p[i] += 0.5 * step * grad[i];
  return lp;
}

void write_draws(std::ostream& out, const PosteriorDraws& draws) {
  csv::Writer w(out);
  std::vector<std::string> header{"chain", "iteration", "divergent", "tree_depth", "lp__"};
  header.insert(header.end(), draws.names.begin(), draws.names.end());
  w.row(header);
  for (std::size_t c = 0; c < draws.chains; ++c)
    for (std::size_t i = 0; i < draws.iterations; ++i) {
      const std::size_t row = c * draws.iterations + i;
      w.field(c).field(i).field(static_cast<int>(draws.divergent[row]))
          .field(static_cast<int>(draws.tree_depth[row])).field(draws.log_density[row]);
      for (std::size_t k = 0; k < draws.parameters(); ++k) w.field(draws.at(c, i, k));
      w.end_row();
    }
}

void write_diagnostics(std::ostream& out, const Diagnostics& d) {
  csv::Writer w(out);
  w.row({"parameter", "mean", "sd", "q05", "median", "q95", "rhat", "ess_bulk",
         "ess_degenerate"});
  for (const auto& p : d.parameters) {
    w.field(p.name).field(p.mean).field(p.sd).field(p.q05).field(p.median).field(p.q95);
    if (p.rhat) w.field(*p.rhat); else w.empty();
    if (p.degenerate) w.empty(); else w.field(p.ess_bulk);
    w.field(p.degenerate ? 1 : 0);
    w.end_row();
  }
  // Sampler-level rows share the table; value sits in the mean column.
  auto summary = [&](const char* name, double value) {
    w.field(name).field(value);
    for (int k = 0; k < 7; ++k) w.empty();
    w.end_row();
  };
  summary("__divergences", static_cast<double>(d.divergences));
  summary("__divergence_rate", d.divergence_rate);
  summary("__mean_tree_depth", d.mean_tree_depth);
  summary("__max_depth_hits", static_cast<double>(d.max_depth_hits));
}

}  // namespace sae::inference
