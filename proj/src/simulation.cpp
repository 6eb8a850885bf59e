#include "sae/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>
#include <unordered_map>

#include <Eigen/Dense>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/rng.hpp"

namespace sae::simulation {

namespace {

constexpr const char* kModule = "simulation-eval";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.6448536269514722;  // standard normal 0.95 quantile

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

enum Purpose : std::uint64_t { kSubsample = 11, kFit = 12, kSynth = 13 };

int worker_count(int requested, std::size_t jobs) {
  int threads = requested;
  if (threads <= 0) {
    if (const char* env = std::getenv("SAE_THREADS")) threads = std::atoi(env);
  }
  if (threads <= 0) threads = 1;
  return static_cast<int>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace

void SubsampleDesign::validate() const {
  if (eas_per_adm1 <= 0)
    throw error(ErrorKind::validation, "eas_per_adm1 must be a positive integer");
  if (replicates <= 0)
    throw error(ErrorKind::validation, "replicates must be a positive integer");
}

std::map<survey::Stratum, int> allocate(int total,
                                        const std::map<survey::Stratum, int>& available,
                                        const std::string& adm1_id) {
  int pool = 0;
  for (const auto& [s, n] : available) pool += n;
  std::map<survey::Stratum, int> out;
  for (const auto& [s, n] : available) out[s] = 0;
  if (pool == 0) {
    if (total > 0)
      throw error(ErrorKind::domain, "ADM1 '" + adm1_id + "' has no EAs to sample");
    return out;
  }

  struct Share {
    survey::Stratum stratum;
    double remainder;
  };
  std::vector<Share> shares;
  int assigned = 0;
  for (const auto& [s, n] : available) {
    const double quota = static_cast<double>(total) * n / pool;
    const int base = static_cast<int>(std::floor(quota));
    out[s] = base;
    assigned += base;
    shares.push_back({s, quota - base});
  }
  // Name order ("rural" < "urban") breaks ties.
  std::stable_sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    return std::string(survey::to_string(a.stratum)) < survey::to_string(b.stratum);
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned)
    out[shares[i % shares.size()].stratum] += 1;

  for (const auto& [s, n] : out) {
    const int have = available.at(s);
    if (n > have)
      throw error(ErrorKind::domain,
                  "stratum " + adm1_id + "/" + survey::to_string(s) + " needs " +
                      std::to_string(n) + " EAs but only " + std::to_string(have) +
                      " are available");
  }
  return out;
}

std::vector<std::size_t> subsample_clusters(const survey::SurveyDataset& full,
                                            const SubsampleDesign& design,
                                            std::size_t replicate) {
  design.validate();
  const auto clusters = full.clusters();

  // ADM1 x stratum -> cluster indices, in dataset order.
  std::map<std::string, std::map<survey::Stratum, std::vector<std::size_t>>> frame;
  for (std::size_t ci = 0; ci < clusters.size(); ++ci)
    frame[clusters[ci].adm1_id][clusters[ci].stratum].push_back(ci);

  std::vector<std::size_t> picked;
  std::uint64_t adm1_index = 0;
  for (const auto& adm1 : full.adm1_ids()) {
    const auto& strata = frame[adm1];
    std::map<survey::Stratum, int> available;
    for (const auto& [s, list] : strata) available[s] = static_cast<int>(list.size());
    const auto alloc = allocate(design.eas_per_adm1, available, adm1);

    for (const auto& [s, list] : strata) {
      const int k = alloc.at(s);
      KeyedStream rng{design.seed, replicate, kSubsample, adm1_index,
                      static_cast<std::uint64_t>(s)};
      std::vector<std::size_t> remaining = list;
      std::vector<double> weight;
      for (std::size_t ci : remaining) weight.push_back(clusters[ci].total_weight);
      for (int draw = 0; draw < k; ++draw) {
        double total = 0.0;
        for (double w : weight) total += w;
        std::size_t j = 0;
        if (total > 0.0) {
          const double target = rng.uniform() * total;
          double acc = 0.0;
          for (j = 0; j + 1 < weight.size(); ++j) {
            acc += weight[j];
            if (target < acc) break;
          }
        } else {
          j = static_cast<std::size_t>(rng.uniform() * weight.size());
        }
        picked.push_back(remaining[j]);
        remaining.erase(remaining.begin() + j);
        weight.erase(weight.begin() + j);
      }
    }
    ++adm1_index;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

PseudoSurvey subsample(const survey::SurveyDataset& full, std::span<const double> y,
                       const SubsampleDesign& design, std::size_t replicate) {
  if (y.size() != full.households().size())
    throw error(ErrorKind::misuse, "indicator length does not match households");
  const auto picked = subsample_clusters(full, design, replicate);
  PseudoSurvey out;
  out.data = full.subset(picked);
  for (std::size_t ci : picked)
    for (std::size_t hi : full.clusters()[ci].households) out.y.push_back(y[hi]);
  return out;
}

double winkler_score(double lower, double upper, double y, double alpha) {
  if (lower > upper)
    throw error(ErrorKind::domain, "interval lower bound exceeds upper bound");
  if (!(alpha > 0.0 && alpha < 1.0)) throw error(ErrorKind::domain, "alpha must be in (0,1)");
  double score = upper - lower;
  if (y < lower) score += 2.0 / alpha * (lower - y);
  if (y > upper) score += 2.0 / alpha * (y - upper);
  return score;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw error(ErrorKind::misuse, "rank vectors differ in length");
  if (a.size() < 2) return kNaN;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

MetricSummary evaluate(std::span<const IntervalEstimate> estimates,
                       std::span<const GoldValue> gold, double alpha) {
  std::unordered_map<std::string, double> truth;
  for (const auto& g : gold)
    if (!truth.emplace(g.area_id, g.value).second)
      throw error(ErrorKind::consistency, "gold value for '" + g.area_id + "' is repeated");

  std::set<std::string> seen, missing_gold, missing_est;
  for (const auto& e : estimates) {
    if (!seen.insert(e.area_id).second)
      throw error(ErrorKind::consistency, "estimate for '" + e.area_id + "' is repeated");
    if (!truth.contains(e.area_id)) missing_gold.insert(e.area_id);
  }
  for (const auto& g : gold)
    if (!seen.contains(g.area_id)) missing_est.insert(g.area_id);
  if (!missing_gold.empty() || !missing_est.empty()) {
    std::string msg = "estimates and gold are not aligned;";
    if (!missing_gold.empty()) {
      msg += " no gold for:";
      for (const auto& id : missing_gold) msg += " " + id;
      if (!missing_est.empty()) msg += ";";
    }
    if (!missing_est.empty()) {
      msg += " no estimate for:";
      for (const auto& id : missing_est) msg += " " + id;
    }
    throw error(ErrorKind::consistency, msg);
  }

  MetricSummary m;
  m.areas = estimates.size();
  for (auto band : {design::ReliabilityBand::unrestricted, design::ReliabilityBand::caution,
                    design::ReliabilityBand::unreliable, design::ReliabilityBand::undefined})
    m.bands[band] = 0;
  if (estimates.empty()) {
    m.mae = m.spearman = m.coverage = m.mil = m.mis = m.mean_cv = kNaN;
    return m;
  }

  std::vector<double> est, ref, cvs;
  std::size_t covered = 0;
  for (const auto& e : estimates) {
    const double g = truth.at(e.area_id);
    est.push_back(e.estimate);
    ref.push_back(g);
    m.mae += std::abs(e.estimate - g);
    m.mil += e.upper - e.lower;
    m.mis += winkler_score(e.lower, e.upper, g, alpha);
    if (e.lower <= g && g <= e.upper) ++covered;
    if (e.cv && std::isfinite(*e.cv)) cvs.push_back(*e.cv);
    m.bands[design::band_for(e.cv)] += 1;
  }
  const double n = static_cast<double>(estimates.size());
  m.mae /= n;
  m.mil /= n;
  m.mis /= n;
  m.coverage = covered / n;
  m.spearman = spearman(est, ref);
  m.mean_cv = mean_of(cvs);
  return m;
}

std::vector<IntervalEstimate> direct_intervals(std::span<const design::DirectEstimate> direct) {
  std::vector<IntervalEstimate> out;
  for (const auto& d : direct) {
    if (!d.has_variance()) continue;
    const double half = kZ95 * std::sqrt(d.v_hat);
    out.push_back({d.area_id, d.p_hat, std::max(0.0, d.p_hat - half),
                   std::min(1.0, d.p_hat + half), d.cv});
  }
  return out;
}

std::vector<IntervalEstimate> posterior_intervals(const models::AreaPrevalenceDraws& draws) {
  std::vector<IntervalEstimate> out;
  const std::size_t L = draws.areas.size();
  std::vector<double> column(draws.draws);
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t d = 0; d < draws.draws; ++d) column[d] = draws.at(d, a);
    const double mean = mean_of(column);
    double ss = 0.0;
    for (double v : column) ss += (v - mean) * (v - mean);
    const double sd = column.size() > 1 ? std::sqrt(ss / (column.size() - 1)) : 0.0;
    IntervalEstimate e{draws.areas[a], mean, inference::quantile(column, 0.05),
                       inference::quantile(column, 0.95), std::nullopt};
    if (mean > 0.0) e.cv = sd / mean;
    out.push_back(std::move(e));
  }
  return out;
}

std::string method_name(const std::optional<models::ModelKind>& kind) {
  return kind ? models::to_string(*kind) : "direct";
}

namespace {

std::vector<GoldValue> restrict_gold(std::span<const GoldValue> gold,
                                     std::span<const IntervalEstimate> est) {
  std::set<std::string> ids;
  for (const auto& e : est) ids.insert(e.area_id);
  std::vector<GoldValue> out;
  for (const auto& g : gold)
    if (ids.contains(g.area_id)) out.push_back(g);
  return out;
}

std::vector<GoldValue> gold_standard(const ValidationInput& input,
                                     const design::DirectOptions& options) {
  if (input.truth) return *input.truth;
  std::vector<GoldValue> gold;
  for (const auto& d : design::direct_estimates(*input.survey, input.y, design::Level::adm2,
                                                options))
    gold.push_back({d.area_id, d.p_hat});
  return gold;
}

models::AreaPrevalenceDraws fit_model(models::ModelKind kind, const ValidationInput& input,
                                      const PseudoSurvey& pseudo,
                                      std::span<const design::DirectEstimate> direct,
                                      const ValidationOptions& options,
                                      std::size_t replicate) {
  const auto& graph = *input.graph;
  const auto& scaling = *input.scaling;
  std::unique_ptr<models::AreaModel> model;
  switch (kind) {
    case models::ModelKind::mean_smoothing:
      model = std::make_unique<models::MeanSmoothingModel>(
          models::area_observations(direct, graph), graph, scaling, options.priors);
      break;
    case models::ModelKind::joint_smoothing:
      model = std::make_unique<models::JointSmoothingModel>(
          models::area_observations(direct, graph), graph, scaling, options.priors);
      break;
    case models::ModelKind::betabinomial: {
      const auto counts = design::cluster_counts(pseudo.data, pseudo.y);
      model = std::make_unique<models::BetaBinomialModel>(
          models::cluster_observations(counts, graph), graph, scaling, options.priors);
      break;
    }
  }
  auto config = options.sampler;
  config.threads = 1;
  config.seed = derive_key({options.sampler.seed, replicate, kFit,
                            static_cast<std::uint64_t>(kind)});
  const auto result = inference::sample(*model, config);
  return models::prevalence_from_draws(result.draws.values, *model, input.areas);
}

}  // namespace

std::vector<ReplicateRow> validate_replicate(const ValidationInput& input,
                                             const SubsampleDesign& design,
                                             const ValidationOptions& options,
                                             std::size_t replicate) {
  if (!input.survey || !input.graph || !input.scaling)
    throw error(ErrorKind::misuse, "validation input needs a survey, graph and scaling");
  const auto gold = gold_standard(input, options.direct);
  const auto pseudo = subsample(*input.survey, input.y, design, replicate);
  const auto direct =
      design::direct_estimates(pseudo.data, pseudo.y, design::Level::adm2, options.direct);

  std::vector<ReplicateRow> rows;
  if (options.include_direct) {
    ReplicateRow row;
    row.replicate = replicate;
    row.method = "direct";
    auto est = direct_intervals(direct);
    row.excluded_areas = gold.size() - est.size();
    row.metrics = evaluate(est, restrict_gold(gold, est));
    rows.push_back(std::move(row));
  }
  for (auto kind : options.models) {
    ReplicateRow row;
    row.replicate = replicate;
    row.method = method_name(kind);
    try {
      const auto draws = fit_model(kind, input, pseudo, direct, options, replicate);
      auto est = posterior_intervals(draws);
      // Scored on the areas that have a gold value.
      std::set<std::string> gold_ids;
      for (const auto& g : gold) gold_ids.insert(g.area_id);
      std::erase_if(est, [&](const IntervalEstimate& e) { return !gold_ids.contains(e.area_id); });
      row.excluded_areas = gold.size() - est.size();
      row.metrics = evaluate(est, restrict_gold(gold, est));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical && e.kind() != ErrorKind::domain &&
          e.kind() != ErrorKind::validation)
        throw;
      row.failed = true;
      row.failure = std::string(e.module()) + ": " + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

MetricReport run_validation(const ValidationInput& input, const SubsampleDesign& design,
                            const ValidationOptions& options) {
  design.validate();
  if (!options.include_direct && options.models.empty())
    throw error(ErrorKind::validation, "nothing to validate: no direct baseline and no models");
  if (!input.survey) throw error(ErrorKind::misuse, "validation input has no survey");
  // Allocation problems surface here, before any worker starts.
  subsample_clusters(*input.survey, design, 0);

  const auto reps = static_cast<std::size_t>(design.replicates);
  std::vector<std::vector<ReplicateRow>> per(reps);
  std::vector<std::exception_ptr> failures(reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < reps;) {
      try {
        per[r] = validate_replicate(input, design, options, r);
      } catch (...) {
        failures[r] = std::current_exception();
      }
    }
  };
  const int n_workers = worker_count(options.threads, reps);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);

  MetricReport report;
  for (auto& rows : per)
    for (auto& row : rows) report.rows.push_back(std::move(row));
  report.averages = average(report.rows);
  return report;
}

std::vector<MethodAverage> average(std::span<const ReplicateRow> rows) {
  std::vector<MethodAverage> out;
  auto slot = [&](const std::string& method) -> MethodAverage& {
    for (auto& a : out)
      if (a.method == method) return a;
    out.emplace_back();
    out.back().method = method;
    return out.back();
  };
  struct Acc {
    std::vector<double> mae, spearman, coverage, mil, mis, excluded;
  };
  std::map<std::string, Acc> acc;
  for (const auto& row : rows) {
    auto& a = slot(row.method);
    if (row.failed) {
      ++a.failed;
      continue;
    }
    ++a.replicates;
    auto& s = acc[row.method];
    auto push = [](std::vector<double>& v, double x) {
      if (std::isfinite(x)) v.push_back(x);
    };
    push(s.mae, row.metrics.mae);
    push(s.spearman, row.metrics.spearman);
    push(s.coverage, row.metrics.coverage);
    push(s.mil, row.metrics.mil);
    push(s.mis, row.metrics.mis);
    s.excluded.push_back(static_cast<double>(row.excluded_areas));
  }
  for (auto& a : out) {
    const auto& s = acc[a.method];
    a.mae = mean_of(s.mae);
    a.spearman = mean_of(s.spearman);
    a.coverage = mean_of(s.coverage);
    a.mil = mean_of(s.mil);
    a.mis = mean_of(s.mis);
    a.mean_excluded = mean_of(s.excluded);
  }
  return out;
}

namespace {

void number_or_na(csv::Writer& w, double x) {
  if (std::isfinite(x))
    w.field(x);
  else
    w.field("NA");
}

}  // namespace

void write_replicates(std::ostream& out, std::span<const ReplicateRow> rows) {
  csv::Writer w(out);
  w.row({"replicate", "method", "status", "areas", "excluded", "mae", "spearman", "coverage",
         "mil", "mis", "mean_cv", "n_unrestricted", "n_caution", "n_unreliable",
         "n_undefined"});
  for (const auto& r : rows) {
    w.field(r.replicate).field(r.method).field(r.failed ? "failed" : "ok");
    if (r.failed) {
      for (int i = 0; i < 12; ++i) w.field("NA");
      w.end_row();
      continue;
    }
    const auto& m = r.metrics;
    w.field(m.areas).field(r.excluded_areas);
    for (double x : {m.mae, m.spearman, m.coverage, m.mil, m.mis, m.mean_cv}) number_or_na(w, x);
    for (auto band : {design::ReliabilityBand::unrestricted, design::ReliabilityBand::caution,
                      design::ReliabilityBand::unreliable, design::ReliabilityBand::undefined})
      w.field(m.bands.contains(band) ? m.bands.at(band) : std::size_t{0});
    w.end_row();
  }
}

void write_summary(std::ostream& out, std::span<const MethodAverage> averages) {
  csv::Writer w(out);
  w.row({"method", "replicates", "failed", "mae", "spearman", "coverage", "mil", "mis",
         "mean_excluded"});
  for (const auto& a : averages) {
    w.field(a.method).field(a.replicates).field(a.failed);
    for (double x : {a.mae, a.spearman, a.coverage, a.mil, a.mis, a.mean_excluded})
      number_or_na(w, x);
    w.end_row();
  }
}

// ---------------------------------------------------------------------------
// Synthetic population

void SyntheticConfig::validate() const {
  if (adm1 == 0 || areas < adm1)
    throw error(ErrorKind::validation, "need at least one area per ADM1");
  if (clusters_per_area == 0 || households_per_cluster == 0)
    throw error(ErrorKind::validation, "clusters and households per cluster must be positive");
  if (!(urban_fraction >= 0.0 && urban_fraction <= 1.0))
    throw error(ErrorKind::validation, "urban_fraction must be in [0,1]");
  if (!(sigma_u > 0.0) || !(phi >= 0.0 && phi <= 1.0) || !(rho > 0.0 && rho < 1.0))
    throw error(ErrorKind::validation, "need sigma_u > 0, phi in [0,1], rho in (0,1)");
}

namespace {

std::string padded(const char* prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width)
    digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

// Beta(a, b) from two gammas (Marsaglia-Tsang); only our keyed stream is used
// so the draw is reproducible across standard libraries.
double gamma_draw(KeyedStream& rng, double shape) {
  if (shape < 1.0) return gamma_draw(rng, shape + 1.0) * std::pow(rng.uniform_open(), 1.0 / shape);
  const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

double beta_draw(KeyedStream& rng, double a, double b) {
  const double x = gamma_draw(rng, a), y = gamma_draw(rng, b);
  return x / (x + y);
}

}  // namespace

SyntheticPopulation synthesize(const SyntheticConfig& config, std::uint64_t replicate) {
  config.validate();
  const std::size_t L = config.areas;
  KeyedStream rng{config.seed, replicate, kSynth};

  std::vector<std::string> ids;
  for (std::size_t l = 0; l < L; ++l) ids.push_back(padded("D", l + 1, 2));

  // Two-row grid (one row for fewer than four areas).
  const std::size_t rows = L >= 4 ? 2 : 1;
  const std::size_t cols = (L + rows - 1) / rows;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t r = l / cols, c = l % cols;
    if (c + 1 < cols && l + 1 < L) edges.emplace_back(l, l + 1);
    if (r + 1 < rows && l + cols < L) edges.emplace_back(l, l + cols);
  }
  SyntheticPopulation pop;
  pop.graph = spatial::AdjacencyGraph(ids, edges);
  const auto scaling = spatial::bym2_scaling(pop.graph);

  // ICAR draw per component: sum over non-null eigenvectors of z / sqrt(lambda).
  std::vector<double> u2(L, 0.0);
  for (const auto& comp : pop.graph.components()) {
    const std::size_t k = comp.size();
    if (k == 1) {
      u2[comp[0]] = rng.normal();
      continue;
    }
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t a = 0; a < k; ++a) {
      Q(a, a) = static_cast<double>(pop.graph.degree(comp[a]));
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t nb : pop.graph.neighbors(comp[a]))
          if (nb == comp[b]) Q(a, b) = -1.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
    for (std::size_t e = 0; e < k; ++e) {
      const double lambda = eig.eigenvalues()(e);
      const double z = rng.normal();
      if (lambda < 1e-9) continue;
      for (std::size_t a = 0; a < k; ++a) u2[comp[a]] += z / std::sqrt(lambda) * eig.eigenvectors()(a, e);
    }
    for (std::size_t a = 0; a < k; ++a) u2[comp[a]] /= scaling.components[pop.graph.component_of(comp[a])].alpha;
  }
  std::vector<double> field(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double u1 = rng.normal();
    field[l] = config.sigma_u * (std::sqrt(1.0 - config.phi) * u1 + std::sqrt(config.phi) * u2[l]);
  }

  const double kappa = (1.0 - config.rho) / config.rho;
  std::vector<survey::HouseholdRecord> households;
  const std::size_t per_adm1 = (L + config.adm1 - 1) / config.adm1;
  for (std::size_t l = 0; l < L; ++l) {
    const std::string adm1 = padded("R", l / per_adm1 + 1, 1);
    const double r_rural = models::inv_logit(config.beta0 + field[l]);
    const double r_urban = models::inv_logit(config.beta0 + config.beta_urban + field[l]);
    // Area urban fraction varies around the national one.
    const double f = std::clamp(config.urban_fraction * rng.uniform(0.5, 1.5), 0.0, 1.0);
    const auto n_urban = static_cast<std::size_t>(std::lround(f * config.clusters_per_area));

    double w_total = 0.0, w_urban = 0.0;
    for (std::size_t c = 0; c < config.clusters_per_area; ++c) {
      const bool urban = c < n_urban;
      const double weight = 100.0 * std::exp(0.3 * rng.normal());
      const double r = urban ? r_urban : r_rural;
      const double rc = beta_draw(rng, r * kappa, (1.0 - r) * kappa);
      const std::string cluster = ids[l] + "-" + padded("C", c + 1, 2);
      for (std::size_t h = 0; h < config.households_per_cluster; ++h) {
        survey::HouseholdRecord rec;
        rec.household_id = cluster + "-" + padded("H", h + 1, 2);
        rec.cluster_id = cluster;
        rec.adm1_id = adm1;
        rec.adm2_id = ids[l];
        rec.stratum = urban ? survey::Stratum::urban : survey::Stratum::rural;
        rec.weight = weight;
        households.push_back(std::move(rec));
        pop.y.push_back(rng.uniform() < rc ? 1.0 : 0.0);
      }
      w_total += weight * config.households_per_cluster;
      if (urban) w_urban += weight * config.households_per_cluster;
    }
    const double q = w_urban / w_total;
    pop.areas.add(ids[l], {adm1, w_total, q});
    pop.truth.push_back({ids[l], q * r_urban + (1.0 - q) * r_rural});
  }
  pop.survey = survey::SurveyDataset(std::move(households));
  return pop;
}

}  // namespace sae::simulation
