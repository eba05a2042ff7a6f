// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/prior_spec.hpp"

namespace phead {

/// Weighted undirected graph in CSR form. Both directions of every edge are
/// stored; the original co-engagement graphs carry no self-loops.
class CoEngagementGraph {
 public:
  struct Edge {
    std::uint32_t u = 0;
    std::uint32_t v = 0;
    double weight = 0.0;
  };

  CoEngagementGraph() = default;
  /// Parallel edges are summed; self-loops are rejected.
  static CoEngagementGraph from_edges(std::size_t nodes, std::span<const Edge> edges);

  std::size_t node_count() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  /// Undirected edge count.
  std::size_t edge_count() const noexcept { return neighbors_.size() / 2; }
  /// 2m: sum of all weighted degrees.
  double total_weight() const noexcept { return total_; }
  double degree(std::uint32_t u) const noexcept { return degree_[u]; }
  /// Weight of edge (u, v); zero when absent.
  double weight(std::uint32_t u, std::uint32_t v) const;

  std::span<const std::uint32_t> neighbors(std::uint32_t u) const noexcept {
    return {neighbors_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
  }
  std::span<const double> weights(std::uint32_t u) const noexcept {
    return {weights_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
  }
  /// Each undirected edge once with u < v, sorted.
  std::vector<Edge> edges() const;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> neighbors_;
  std::vector<double> weights_;
  std::vector<double> degree_;
  double total_ = 0.0;
};

/// Items are linked when the same user engaged both within the user's last
/// `per_user_cap` interactions; the weight counts such users (or is 1 with
/// `binarize`).
CoEngagementGraph build_item_graph(std::span<const std::vector<Interaction>> users,
                                   std::size_t num_items, std::size_t per_user_cap = 1000,
                                   bool binarize = false);

/// Users are linked when they engaged the same item. Each item contributes
/// pairs among a seeded sample of at most `per_item_user_cap` of its users.
CoEngagementGraph build_user_graph(std::span<const std::vector<Interaction>> users,
                                   std::size_t num_items, std::size_t per_item_user_cap = 2000,
                                   std::uint64_t seed = 0, bool binarize = false);

/// Q = 1/(2m) sum_ij [A_ij - resolution k_i k_j / (2m)] delta(c_i, c_j).
double modularity(const CoEngagementGraph& graph, std::span<const std::uint32_t> labels,
                  double resolution = 1.0);

struct CommunityOptions {
  double resolution = 1.0;
  /// Clusters smaller than this are merged into one residual cluster;
  /// 0 means 1% of the nodes (at least 1).
  std::size_t min_size = 0;
  std::uint64_t seed = 0;
  std::size_t max_levels = 32;
};

struct Clustering {
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> sizes;
  /// Modularity of the final labels.
  double modularity = 0.0;
  double resolution = 1.0;
  std::uint64_t seed = 0;
  std::size_t min_size = 1;
  /// Modularity on the input graph after every local-moving sweep.
  std::vector<double> sweep_modularity;
  /// Label of the merged residual cluster, or -1 when nothing was merged.
  std::int64_t residual = -1;

  std::size_t cluster_count() const noexcept { return sizes.size(); }
};

/// Louvain local moving and aggregation, then every cluster is split into
/// its connected components and clusters below min_size are merged.
/// Labels are numbered by first appearance; the residual cluster is last.
Clustering detect_communities(const CoEngagementGraph& graph, const CommunityOptions& options = {});

/// Clusters as connected components of the same-label subgraphs (no merge).
std::vector<std::uint32_t> split_disconnected(const CoEngagementGraph& graph,
                                              std::span<const std::uint32_t> labels);

/// n contiguous segments of 1..tau whose sizes differ by at most one;
/// earlier segments take the extra steps.
std::vector<TimeSegment> instantiate_temporal(std::uint32_t tau, std::uint32_t n);
PriorAxis temporal_axis(std::uint32_t tau, std::uint32_t n);

/// Writes the clustering labels into the catalog's graph-cluster field.
void apply_graph_clusters(ItemCatalog& catalog, const Clustering& clustering);
PriorAxis graph_axis(const Clustering& clustering);
PriorAxis user_axis(const Clustering& clustering);

/// "node,cluster" rows.
std::string clustering_to_csv(const Clustering& clustering);
/// Q, sizes, resolution, seed, min_size and the sweep history.
std::string clustering_summary_json(const Clustering& clustering);
Clustering clustering_from_csv(const std::string& text);

}  // namespace phead
