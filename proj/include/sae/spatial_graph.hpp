#pragma once

// Area neighbourhood graph, the ICAR quadratic form and BYM2 scaling.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

namespace sae::spatial {

class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  // Undirected edges as index pairs; duplicates are merged. Self-loops and
  // out-of-range indices are rejected.
  AdjacencyGraph(std::vector<std::string> nodes,
                 const std::vector<std::pair<std::size_t, std::size_t>>& edges);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  std::optional<std::size_t> index_of(std::string_view id) const;
  const std::vector<std::size_t>& neighbors(std::size_t node) const {
    return neighbors_[node];
  }
  std::size_t degree(std::size_t node) const { return neighbors_[node].size(); }

  // Each undirected edge once, with from < to.
  std::span<const std::int32_t> edge_from() const { return edge_from_; }
  std::span<const std::int32_t> edge_to() const { return edge_to_; }
  std::size_t edge_count() const { return edge_from_.size(); }

  const std::vector<std::vector<std::size_t>>& components() const {
    return components_;
  }
  std::size_t component_of(std::size_t node) const { return component_of_[node]; }
  bool is_singleton(std::size_t node) const {
    return components_[component_of_[node]].size() == 1;
  }

  // Diagonal = degree, off-diagonal -1 for each neighbour pair.
  Eigen::SparseMatrix<double> laplacian() const;

 private:
  std::vector<std::string> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<std::int32_t> edge_from_;
  std::vector<std::int32_t> edge_to_;
  std::vector<std::vector<std::size_t>> components_;
  std::vector<std::size_t> component_of_;
};

// Parses "id: n1,n2,..." lines. Blank lines and lines starting with '#' are
// skipped. Every neighbour must itself have a line, and listings must be
// symmetric. When known_ids is given, every node must appear in it.
AdjacencyGraph parse_adjacency(std::string_view text,
                               const std::vector<std::string>* known_ids = nullptr);
AdjacencyGraph build_graph(const std::filesystem::path& path,
                           const std::vector<std::string>* known_ids = nullptr);
void write_adjacency(std::ostream& out, const AdjacencyGraph& graph);

// Sum over undirected edges of (u_i - u_j)^2.
double icar_quadratic(std::span<const double> u, const AdjacencyGraph& graph);

struct ComponentScaling {
  std::size_t size = 0;
  double geometric_mean_variance = 1.0;  // 1 for singletons
  double alpha = 1.0;
};

struct Bym2Scaling {
  // Geometric mean over all nodes in non-singleton components.
  double geometric_mean_marginal_variance = 0.0;
  double alpha = 0.0;
  std::vector<ComponentScaling> components;  // indexed like graph.components()
  std::vector<double> node_alpha;            // per node; 1 for singletons
};

// Generalized inverse of each component Laplacian (zero eigenvalue dropped),
// geometric mean of its diagonal, alpha = sqrt of that.
Bym2Scaling bym2_scaling(const AdjacencyGraph& graph);

void write_scaling_report(std::ostream& out, const AdjacencyGraph& graph,
                          const Bym2Scaling& scaling);

}  // namespace sae::spatial
