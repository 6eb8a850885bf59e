#include "sae/design.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/kernels/kernels.hpp"

namespace sae::design {

namespace {

constexpr const char* kModule = "design-estimation";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

}  // namespace

double hajek(std::span<const double> y, std::span<const double> w) {
  if (y.empty()) throw error(ErrorKind::misuse, "no households to estimate from");
  if (y.size() != w.size()) throw error(ErrorKind::misuse, "y and w differ in length");
  double total = kernels::sum(w);
  if (!(total > 0.0)) throw error(ErrorKind::domain, "total weight is not positive");
  return kernels::dot(w, y) / total;
}

VarianceEstimate linearized_variance(const AreaSample& area) {
  const std::size_t m = area.clusters.size();
  if (m < 2)
    throw error(ErrorKind::misuse,
                "area '" + area.area_id + "' has " + std::to_string(m) +
                    " cluster(s); variance is undefined without a phantom cluster");
  double sum_wy = 0.0, sum_w = 0.0;
  std::vector<double> cluster_wy(m), cluster_w(m);
  for (std::size_t c = 0; c < m; ++c) {
    const auto& cl = area.clusters[c];
    cluster_wy[c] = kernels::dot(cl.w, cl.y);
    cluster_w[c] = kernels::sum(cl.w);
    sum_wy += cluster_wy[c];
    sum_w += cluster_w[c];
  }
  if (!(sum_w > 0.0)) throw error(ErrorKind::domain, "total weight is not positive");
  const double p = sum_wy / sum_w;

  std::vector<double> z(m);
  for (std::size_t c = 0; c < m; ++c) z[c] = cluster_wy[c] - p * cluster_w[c];
  double z_bar = 0.0;
  for (double v : z) z_bar += v;
  z_bar /= static_cast<double>(m);
  double ss = 0.0;
  for (double v : z) ss += (v - z_bar) * (v - z_bar);

  const double md = static_cast<double>(m);
  return {p, md / (md - 1.0) * ss / (sum_w * sum_w), md - 1.0};
}

AreaSample phantom_augment(const AreaSample& area, double adm1_prevalence,
                           double adm1_mean_cluster_weight) {
  if (area.clusters.size() != 1)
    throw error(ErrorKind::misuse,
                "phantom augmentation applies only to single-cluster areas; '" +
                    area.area_id + "' has " + std::to_string(area.clusters.size()));
  if (!(adm1_prevalence >= 0.0 && adm1_prevalence <= 1.0))
    throw error(ErrorKind::domain, "ADM1 prevalence outside [0,1]");
  if (!(adm1_mean_cluster_weight > 0.0))
    throw error(ErrorKind::domain, "ADM1 mean cluster weight must be positive");
  AreaSample out = area;
  out.clusters.push_back({{adm1_prevalence}, {adm1_mean_cluster_weight}, true});
  return out;
}

EffectiveSampleEstimate effective_sample_variance(std::span<const double> y,
                                                  std::span<const double> w) {
  if (y.empty()) throw error(ErrorKind::misuse, "no households to estimate from");
  const double total = kernels::sum(w);
  if (!(total > 0.0)) throw error(ErrorKind::domain, "total weight is not positive");
  std::vector<double> normalized(w.begin(), w.end());
  for (double& v : normalized) v /= total;
  std::vector<double> ones(normalized.size(), 1.0);
  const double sum_sq = kernels::weighted_sum_squares(ones, normalized);

  EffectiveSampleEstimate out;
  out.p_hat = kernels::dot(normalized, y);
  out.n_effective = 1.0 / sum_sq;
  // Equal weights: n* = n exactly, without the round-off of 1/sum(1/n^2).
  if (std::all_of(w.begin(), w.end(), [&](double v) { return v == w.front(); })) {
    out.n_effective = static_cast<double>(w.size());
    out.p_hat = kernels::sum(y) / out.n_effective;
  }
  out.v_hat = out.p_hat * (1.0 - out.p_hat) / out.n_effective;
  out.dof = out.n_effective - 1.0;
  out.degenerate_dof = !(out.n_effective > 1.0);
  return out;
}

const char* to_string(ReliabilityBand band) {
  switch (band) {
    case ReliabilityBand::unrestricted: return "unrestricted";
    case ReliabilityBand::caution: return "caution";
    case ReliabilityBand::unreliable: return "unreliable";
    case ReliabilityBand::undefined: return "undefined";
  }
  return "undefined";
}

ReliabilityBand parse_band(const std::string& text) {
  if (text == "unrestricted") return ReliabilityBand::unrestricted;
  if (text == "caution") return ReliabilityBand::caution;
  if (text == "unreliable") return ReliabilityBand::unreliable;
  return ReliabilityBand::undefined;
}

ReliabilityBand band_for(std::optional<double> cv) {
  if (!cv || std::isnan(*cv)) return ReliabilityBand::undefined;
  if (*cv < 0.166) return ReliabilityBand::unrestricted;
  if (*cv <= 0.333) return ReliabilityBand::caution;
  return ReliabilityBand::unreliable;
}

bool DirectEstimate::has_variance() const {
  return !std::isnan(v_hat) && !std::isnan(dof);
}

LogitEstimate logit_scale(const DirectEstimate& est) {
  const double p = est.p_hat;
  if (!(p > 0.0 && p < 1.0))
    throw error(ErrorKind::domain, "area '" + est.area_id + "' has boundary prevalence " +
                                       csv::format_number(p) + "; logit undefined");
  if (!est.has_variance())
    throw error(ErrorKind::misuse, "area '" + est.area_id + "' has no variance");
  const double q = p * (1.0 - p);
  return {std::log(p / (1.0 - p)), est.v_hat / (q * q)};
}

void cv_classify(std::span<DirectEstimate> estimates) {
  for (auto& e : estimates) {
    if (e.p_hat > 0.0 && e.has_variance())
      e.cv = std::sqrt(e.v_hat) / e.p_hat;
    else
      e.cv.reset();
    e.band = band_for(e.cv);
  }
}

std::vector<DirectEstimate> direct_estimates(const survey::SurveyDataset& data,
                                             std::span<const double> y,
                                             Level level,
                                             const DirectOptions& options) {
  if (y.size() != data.households().size())
    throw error(ErrorKind::misuse, "indicator length does not match households");

  auto area_of = [&](const survey::Cluster& c) -> const std::string& {
    return level == Level::adm2 ? c.adm2_id : c.adm1_id;
  };

  // Areas in first-appearance order with their clusters.
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> area_clusters;
  for (std::size_t ci = 0; ci < data.clusters().size(); ++ci) {
    const auto& id = area_of(data.clusters()[ci]);
    auto [it, inserted] = area_clusters.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(ci);
  }

  auto sample_for = [&](const std::string& id, const std::vector<std::size_t>& cis) {
    AreaSample s{id, {}};
    for (std::size_t ci : cis) {
      ClusterSample cs;
      for (std::size_t hi : data.clusters()[ci].households) {
        cs.y.push_back(y[hi]);
        cs.w.push_back(data.household(hi).weight);
      }
      s.clusters.push_back(std::move(cs));
    }
    return s;
  };

  // ADM1 prevalence and mean cluster weight, for phantom clusters.
  std::map<std::string, std::pair<double, double>> adm1_stats;
  if (level == Level::adm2 && options.method == VarianceMethod::linearized &&
      options.phantom) {
    std::map<std::string, std::array<double, 3>> acc;  // sum wy, sum w, clusters
    for (const auto& c : data.clusters()) {
      auto& a = acc[c.adm1_id];
      for (std::size_t hi : c.households) {
        a[0] += data.household(hi).weight * y[hi];
        a[1] += data.household(hi).weight;
      }
      a[2] += 1.0;
    }
    for (const auto& [id, a] : acc) adm1_stats[id] = {a[0] / a[1], a[1] / a[2]};
  }

  std::vector<DirectEstimate> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    const auto& cis = area_clusters[id];
    AreaSample sample = sample_for(id, cis);
    std::vector<double> ys, ws;
    for (const auto& cs : sample.clusters) {
      ys.insert(ys.end(), cs.y.begin(), cs.y.end());
      ws.insert(ws.end(), cs.w.begin(), cs.w.end());
    }

    DirectEstimate e;
    e.area_id = id;
    e.n_households = static_cast<long>(ys.size());
    e.n_clusters = static_cast<long>(cis.size());
    e.p_hat = hajek(ys, ws);

    if (options.method == VarianceMethod::effective_sample) {
      auto r = effective_sample_variance(ys, ws);
      e.v_hat = r.v_hat;
      e.dof = r.dof;
      e.n_effective = r.n_effective;
      e.degenerate_dof = r.degenerate_dof;
    } else if (cis.size() >= 2) {
      e.n_effective = effective_sample_variance(ys, ws).n_effective;
      auto r = linearized_variance(sample);
      e.v_hat = r.v_hat;
      e.dof = r.dof;
    } else if (options.phantom && level == Level::adm2) {
      const auto& adm1 = data.clusters()[cis.front()].adm1_id;
      auto [prev, mean_w] = adm1_stats.at(adm1);
      e.n_effective = effective_sample_variance(ys, ws).n_effective;
      auto r = linearized_variance(phantom_augment(sample, prev, mean_w));
      e.v_hat = r.v_hat;
      e.dof = r.dof;
      e.phantom_used = true;
    } else {
      e.v_hat = kNaN;
      e.dof = kNaN;
    }

    if (options.continuity_adjustment && (e.p_hat == 0.0 || e.p_hat == 1.0)) {
      double sum_w = 0.0, sum_wy = 0.0;
      for (std::size_t i = 0; i < ys.size(); ++i) {
        sum_w += ws[i];
        sum_wy += ws[i] * ys[i];
      }
      const double mean_w = sum_w / static_cast<double>(ws.size());
      e.p_hat = (sum_wy + 0.5 * mean_w) / (sum_w + mean_w);
      e.boundary_adjusted = true;
    }
    out.push_back(std::move(e));
  }
  cv_classify(out);
  return out;
}

void write_direct(std::ostream& out, std::span<const DirectEstimate> estimates) {
  csv::Writer w(out);
  w.row({"area_id", "p_hat", "v_hat", "dof", "n_clusters", "n_households",
         "n_effective", "cv", "reliability_band", "phantom_used",
         "boundary_adjusted"});
  for (const auto& e : estimates) {
    w.field(e.area_id).field(e.p_hat).field(e.v_hat).field(e.dof)
        .field(static_cast<long long>(e.n_clusters))
        .field(static_cast<long long>(e.n_households));
    if (e.n_effective) w.field(*e.n_effective); else w.empty();
    if (e.cv) w.field(*e.cv); else w.empty();
    w.field(to_string(e.band)).field(e.phantom_used ? 1 : 0)
        .field(e.boundary_adjusted ? 1 : 0);
    w.end_row();
  }
}

std::vector<DirectEstimate> load_direct(const std::filesystem::path& path,
                                        bool require_dof) {
  csv::Table t = csv::read(path);
  const std::size_t c_id = t.column("area_id"), c_p = t.column("p_hat"),
                    c_v = t.column("v_hat");
  auto c_dof = require_dof ? std::optional(t.column("dof")) : t.find_column("dof");
  auto c_nc = t.find_column("n_clusters"), c_nh = t.find_column("n_households"),
       c_ne = t.find_column("n_effective"), c_ph = t.find_column("phantom_used");
  std::vector<DirectEstimate> out;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    DirectEstimate e;
    e.area_id = t.cell(r, c_id);
    e.p_hat = t.number(r, c_p);
    e.v_hat = t.optional_number(r, c_v).value_or(kNaN);
    e.dof = c_dof ? t.optional_number(r, *c_dof).value_or(kNaN) : kNaN;
    if (c_nc) e.n_clusters = t.integer(r, *c_nc);
    if (c_nh) e.n_households = t.integer(r, *c_nh);
    if (c_ne) e.n_effective = t.optional_number(r, *c_ne);
    if (c_ph) e.phantom_used = t.cell(r, *c_ph) == "1";
    if (!(e.p_hat >= 0.0 && e.p_hat <= 1.0))
      throw error(ErrorKind::validation, "area '" + e.area_id + "' has p_hat outside [0,1]");
    out.push_back(std::move(e));
  }
  cv_classify(out);
  return out;
}

std::vector<ClusterCount> cluster_counts(const survey::SurveyDataset& data,
                                         std::span<const double> y) {
  std::vector<ClusterCount> out;
  for (const auto& c : data.clusters()) {
    ClusterCount cc{c.cluster_id, c.adm1_id, c.adm2_id, c.stratum, 0,
                    static_cast<long>(c.households.size()), c.total_weight};
    for (std::size_t hi : c.households) cc.y += y[hi] > 0.5 ? 1 : 0;
    out.push_back(std::move(cc));
  }
  return out;
}

void write_cluster_counts(std::ostream& out, std::span<const ClusterCount> counts) {
  csv::Writer w(out);
  w.row({"cluster_id", "adm1_id", "adm2_id", "stratum", "y", "n", "weight"});
  for (const auto& c : counts) {
    w.field(c.cluster_id).field(c.adm1_id).field(c.adm2_id)
        .field(survey::to_string(c.stratum)).field(static_cast<long long>(c.y))
        .field(static_cast<long long>(c.n)).field(c.weight);
    w.end_row();
  }
}

std::vector<ClusterCount> load_cluster_counts(const std::filesystem::path& path) {
  csv::Table t = csv::read(path);
  const std::size_t c_id = t.column("cluster_id"), c_a1 = t.column("adm1_id"),
                    c_a2 = t.column("adm2_id"), c_s = t.column("stratum"),
                    c_y = t.column("y"), c_n = t.column("n");
  auto c_w = t.find_column("weight");
  std::vector<ClusterCount> out;
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    ClusterCount c{t.cell(r, c_id), t.cell(r, c_a1), t.cell(r, c_a2),
                   survey::parse_stratum(t.cell(r, c_s)), t.integer(r, c_y),
                   t.integer(r, c_n), c_w ? t.number(r, *c_w) : 0.0};
    if (c.y < 0 || c.y > c.n)
      throw error(ErrorKind::validation, "cluster '" + c.cluster_id + "' has y outside [0, n]");
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace sae::design
