#include "sae/spatial_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "sae/csv.hpp"
#include "sae/error.hpp"
#include "sae/kernels/kernels.hpp"

namespace sae::spatial {

namespace {

constexpr const char* kModule = "spatial-graph";

Error error(ErrorKind kind, const std::string& message) {
  return Error(kind, kModule, message);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

AdjacencyGraph::AdjacencyGraph(
    std::vector<std::string> nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges)
    : nodes_(std::move(nodes)), neighbors_(nodes_.size()) {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!index_.emplace(nodes_[i], i).second)
      throw error(ErrorKind::consistency, "duplicate node '" + nodes_[i] + "'");

  std::set<std::pair<std::size_t, std::size_t>> unique;
  for (auto [a, b] : edges) {
    if (a >= nodes_.size() || b >= nodes_.size())
      throw error(ErrorKind::lookup, "edge references a node out of range");
    if (a == b) throw error(ErrorKind::validation, "self-loop on '" + nodes_[a] + "'");
    unique.insert({std::min(a, b), std::max(a, b)});
  }
  for (auto [a, b] : unique) {
    neighbors_[a].push_back(b);
    neighbors_[b].push_back(a);
    edge_from_.push_back(static_cast<std::int32_t>(a));
    edge_to_.push_back(static_cast<std::int32_t>(b));
  }
  for (auto& n : neighbors_) std::sort(n.begin(), n.end());

  component_of_.assign(nodes_.size(), static_cast<std::size_t>(-1));
  for (std::size_t start = 0; start < nodes_.size(); ++start) {
    if (component_of_[start] != static_cast<std::size_t>(-1)) continue;
    const std::size_t id = components_.size();
    std::vector<std::size_t> members{start};
    component_of_[start] = id;
    for (std::size_t k = 0; k < members.size(); ++k)
      for (std::size_t nb : neighbors_[members[k]])
        if (component_of_[nb] == static_cast<std::size_t>(-1)) {
          component_of_[nb] = id;
          members.push_back(nb);
        }
    std::sort(members.begin(), members.end());
    components_.push_back(std::move(members));
  }
}

std::optional<std::size_t> AdjacencyGraph::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::SparseMatrix<double> AdjacencyGraph::laplacian() const {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < size(); ++i)
    triplets.emplace_back(i, i, static_cast<double>(degree(i)));
  for (std::size_t e = 0; e < edge_count(); ++e) {
    triplets.emplace_back(edge_from_[e], edge_to_[e], -1.0);
    triplets.emplace_back(edge_to_[e], edge_from_[e], -1.0);
  }
  Eigen::SparseMatrix<double> q(size(), size());
  q.setFromTriplets(triplets.begin(), triplets.end());
  return q;
}

AdjacencyGraph parse_adjacency(std::string_view text,
                               const std::vector<std::string>* known_ids) {
  std::vector<std::string> nodes;
  std::vector<std::vector<std::string>> listed;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto colon = t.find(':');
    if (colon == std::string::npos)
      throw error(ErrorKind::schema,
                  "adjacency line " + std::to_string(line_no) + " has no ':'");
    nodes.push_back(trim(std::string_view(t).substr(0, colon)));
    std::vector<std::string> nbrs;
    std::string rest = t.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto comma = rest.find(',', pos);
      std::string id = trim(std::string_view(rest).substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (!id.empty()) nbrs.push_back(id);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    listed.push_back(std::move(nbrs));
  }

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].empty())
      throw error(ErrorKind::schema, "adjacency line with empty area id");
    if (!index.emplace(nodes[i], i).second)
      throw error(ErrorKind::consistency, "area '" + nodes[i] + "' listed twice");
  }
  // A neighbour without a line of its own lists nobody, so any reference to
  // it surfaces below as an asymmetric pair.
  const std::size_t declared = nodes.size();
  for (std::size_t i = 0; i < declared; ++i)
    for (const auto& nb : listed[i])
      if (index.emplace(nb, nodes.size()).second) {
        nodes.push_back(nb);
        listed.emplace_back();
      }
  if (known_ids)
    for (const auto& id : nodes)
      if (std::find(known_ids->begin(), known_ids->end(), id) == known_ids->end())
        throw error(ErrorKind::lookup, "unknown area id '" + id + "'");

  std::set<std::pair<std::size_t, std::size_t>> directed;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const auto& nb : listed[i]) {
      std::size_t j = index.at(nb);
      if (j == i)
        throw error(ErrorKind::validation, "area '" + nodes[i] + "' lists itself");
      directed.insert({i, j});
    }
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (auto [a, b] : directed) {
    if (!directed.contains({b, a}))
      throw error(ErrorKind::consistency, "asymmetric adjacency: '" + nodes[a] +
                                              "' lists '" + nodes[b] +
                                              "' but not the reverse");
    if (a < b) edges.emplace_back(a, b);
  }
  return AdjacencyGraph(std::move(nodes), edges);
}

AdjacencyGraph build_graph(const std::filesystem::path& path,
                           const std::vector<std::string>* known_ids) {
  std::ifstream in(path);
  if (!in) throw error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_adjacency(buf.str(), known_ids);
}

void write_adjacency(std::ostream& out, const AdjacencyGraph& graph) {
  for (std::size_t i = 0; i < graph.size(); ++i) {
    out << graph.nodes()[i] << ":";
    const auto& nb = graph.neighbors(i);
    for (std::size_t k = 0; k < nb.size(); ++k)
      out << (k == 0 ? " " : ",") << graph.nodes()[nb[k]];
    out << '\n';
  }
}

double icar_quadratic(std::span<const double> u, const AdjacencyGraph& graph) {
  if (u.size() != graph.size())
    throw error(ErrorKind::misuse, "vector length " + std::to_string(u.size()) +
                                       " does not match " +
                                       std::to_string(graph.size()) + " nodes");
  return kernels::edge_squared_differences(u, graph.edge_from(), graph.edge_to());
}

Bym2Scaling bym2_scaling(const AdjacencyGraph& graph) {
  Bym2Scaling out;
  out.node_alpha.assign(graph.size(), 1.0);
  double log_sum = 0.0;
  std::size_t structured_nodes = 0;

  for (const auto& members : graph.components()) {
    ComponentScaling cs;
    cs.size = members.size();
    if (members.size() >= 2) {
      const Eigen::Index n = static_cast<Eigen::Index>(members.size());
      std::unordered_map<std::size_t, Eigen::Index> local;
      for (Eigen::Index k = 0; k < n; ++k) local[members[k]] = k;
      Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        q(k, k) = static_cast<double>(graph.degree(members[k]));
        for (std::size_t nb : graph.neighbors(members[k])) q(k, local[nb]) = -1.0;
      }
      // Eigenvalues ascend; index 0 is the constant vector's zero eigenvalue.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
      const auto& values = es.eigenvalues();
      const auto& vectors = es.eigenvectors();
      Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
      for (Eigen::Index j = 1; j < n; ++j)
        diag += vectors.col(j).cwiseAbs2() / values(j);

      double component_log = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) component_log += std::log(diag(k));
      log_sum += component_log;
      structured_nodes += members.size();
      cs.geometric_mean_variance = std::exp(component_log / static_cast<double>(n));
      cs.alpha = std::sqrt(cs.geometric_mean_variance);
      for (std::size_t node : members) out.node_alpha[node] = cs.alpha;
    }
    out.components.push_back(cs);
  }
  if (structured_nodes == 0)
    throw error(ErrorKind::domain,
                "graph has only singleton components; no structured effect is definable");
  out.geometric_mean_marginal_variance =
      std::exp(log_sum / static_cast<double>(structured_nodes));
  out.alpha = std::sqrt(out.geometric_mean_marginal_variance);
  return out;
}

void write_scaling_report(std::ostream& out, const AdjacencyGraph& graph,
                          const Bym2Scaling& scaling) {
  csv::Writer w(out);
  w.row({"component", "size", "first_area", "geometric_mean_variance", "alpha"});
  for (std::size_t c = 0; c < scaling.components.size(); ++c) {
    const auto& cs = scaling.components[c];
    w.field(c).field(cs.size).field(graph.nodes()[graph.components()[c].front()])
        .field(cs.geometric_mean_variance).field(cs.alpha);
    w.end_row();
  }
  w.field("all").field(graph.size()).empty()
      .field(scaling.geometric_mean_marginal_variance).field(scaling.alpha);
  w.end_row();
}

}  // namespace sae::spatial
