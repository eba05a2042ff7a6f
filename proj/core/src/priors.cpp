// SPDX-License-Identifier: Apache-2.0
#include "phead/priors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "json_util.hpp"
#include "phead/error.hpp"
#include "phead/rng.hpp"

namespace phead {

CoEngagementGraph CoEngagementGraph::from_edges(std::size_t nodes, std::span<const Edge> edges) {
  std::vector<Edge> both;
  both.reserve(edges.size() * 2);
  for (const auto& e : edges) {
    if (e.u >= nodes || e.v >= nodes) throw DataError("graph edge endpoint out of range");
    if (e.u == e.v) throw DataError("co-engagement graphs have no self-loops");
    both.push_back(e);
    both.push_back({e.v, e.u, e.weight});
  }
  std::sort(both.begin(), both.end(),
            [](const Edge& a, const Edge& b) { return a.u != b.u ? a.u < b.u : a.v < b.v; });
  CoEngagementGraph g;
  g.offsets_.assign(nodes + 1, 0);
  g.degree_.assign(nodes, 0.0);
  for (std::size_t i = 0; i < both.size();) {
    std::size_t j = i;
    double w = 0.0;
    while (j < both.size() && both[j].u == both[i].u && both[j].v == both[i].v) w += both[j++].weight;
    g.neighbors_.push_back(both[i].v);
    g.weights_.push_back(w);
    ++g.offsets_[both[i].u + 1];
    g.degree_[both[i].u] += w;
    g.total_ += w;
    i = j;
  }
  for (std::size_t u = 0; u < nodes; ++u) g.offsets_[u + 1] += g.offsets_[u];
  return g;
}

double CoEngagementGraph::weight(std::uint32_t u, std::uint32_t v) const {
  auto nb = neighbors(u);
  auto it = std::lower_bound(nb.begin(), nb.end(), v);
  if (it == nb.end() || *it != v) return 0.0;
  return weights(u)[static_cast<std::size_t>(it - nb.begin())];
}

std::vector<CoEngagementGraph::Edge> CoEngagementGraph::edges() const {
  std::vector<Edge> out;
  for (std::uint32_t u = 0; u < node_count(); ++u) {
    auto nb = neighbors(u);
    auto w = weights(u);
    for (std::size_t i = 0; i < nb.size(); ++i)
      if (u < nb[i]) out.push_back({u, nb[i], w[i]});
  }
  return out;
}

namespace {

/// Counts unordered pairs within each group of distinct node ids.
class PairCounter {
 public:
  explicit PairCounter(std::size_t nodes) : nodes_(nodes) {}

  void add_group(std::vector<std::uint32_t>& members) {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        ++counts_[(std::uint64_t{members[a]} << 32) | members[b]];
  }

  CoEngagementGraph graph(bool binarize) const {
    std::vector<CoEngagementGraph::Edge> edges;
    edges.reserve(counts_.size());
    for (const auto& [key, c] : counts_)
      edges.push_back({static_cast<std::uint32_t>(key >> 32), static_cast<std::uint32_t>(key),
                       binarize ? 1.0 : static_cast<double>(c)});
    return CoEngagementGraph::from_edges(nodes_, edges);
  }

 private:
  std::size_t nodes_;
  std::unordered_map<std::uint64_t, std::uint32_t> counts_;
};

}  // namespace

CoEngagementGraph build_item_graph(std::span<const std::vector<Interaction>> users,
                                   std::size_t num_items, std::size_t per_user_cap, bool binarize) {
  PairCounter counter(num_items);
  std::vector<std::uint32_t> members;
  for (const auto& seq : users) {
    const std::size_t begin = seq.size() > per_user_cap ? seq.size() - per_user_cap : 0;
    members.clear();
    for (std::size_t i = begin; i < seq.size(); ++i) {
      if (seq[i].item >= num_items) throw DataError("interaction item outside catalog");
      members.push_back(seq[i].item);
    }
    counter.add_group(members);
  }
  return counter.graph(binarize);
}

CoEngagementGraph build_user_graph(std::span<const std::vector<Interaction>> users,
                                   std::size_t num_items, std::size_t per_item_user_cap,
                                   std::uint64_t seed, bool binarize) {
  std::vector<std::vector<std::uint32_t>> engaged(num_items);
  for (std::size_t u = 0; u < users.size(); ++u)
    for (const auto& x : users[u]) {
      if (x.item >= num_items) throw DataError("interaction item outside catalog");
      auto& list = engaged[x.item];
      if (list.empty() || list.back() != u) list.push_back(static_cast<std::uint32_t>(u));
    }
  PairCounter counter(users.size());
  for (std::size_t i = 0; i < num_items; ++i) {
    auto& list = engaged[i];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    if (list.size() > per_item_user_cap) {
      Rng rng(derive_seed(seed, i));
      rng.shuffle(std::span<std::uint32_t>(list));
      list.resize(per_item_user_cap);
    }
    counter.add_group(list);
  }
  return counter.graph(binarize);
}

double modularity(const CoEngagementGraph& graph, std::span<const std::uint32_t> labels,
                  double resolution) {
  if (labels.size() != graph.node_count()) throw ConfigError("one label per node required");
  const double m2 = graph.total_weight();
  if (m2 <= 0.0) return 0.0;
  const std::uint32_t c = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> in(c, 0.0), tot(c, 0.0);
  for (std::uint32_t u = 0; u < graph.node_count(); ++u) {
    tot[labels[u]] += graph.degree(u);
    auto nb = graph.neighbors(u);
    auto w = graph.weights(u);
    for (std::size_t i = 0; i < nb.size(); ++i)
      if (labels[nb[i]] == labels[u]) in[labels[u]] += w[i];
  }
  double q = 0.0;
  for (std::uint32_t k = 0; k < c; ++k) q += in[k] / m2 - resolution * (tot[k] / m2) * (tot[k] / m2);
  return q;
}

namespace {

/// Working graph of one Louvain level; self[u] holds the weight internal to
/// the aggregated node u (both directions).
struct LevelGraph {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> adj;
  std::vector<double> self;
  std::vector<double> degree;
  double m2 = 0.0;
};

LevelGraph level_from(const CoEngagementGraph& g) {
  LevelGraph lg;
  const std::size_t n = g.node_count();
  lg.adj.resize(n);
  lg.self.assign(n, 0.0);
  lg.degree.assign(n, 0.0);
  for (std::uint32_t u = 0; u < n; ++u) {
    auto nb = g.neighbors(u);
    auto w = g.weights(u);
    for (std::size_t i = 0; i < nb.size(); ++i) lg.adj[u].push_back({nb[i], w[i]});
    lg.degree[u] = g.degree(u);
  }
  lg.m2 = g.total_weight();
  return lg;
}

/// One round of local moving to convergence. Returns true if any node moved.
bool local_moving(const LevelGraph& g, std::vector<std::uint32_t>& comm, double resolution, Rng& rng,
                  const std::function<void()>& after_sweep) {
  const std::size_t n = g.adj.size();
  std::vector<double> tot(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) tot[comm[u]] += g.degree[u];
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(order));

  std::vector<double> link(n, 0.0);
  std::vector<std::uint32_t> touched;
  bool any = false;
  for (;;) {
    std::size_t moves = 0;
    for (auto u : order) {
      const std::uint32_t old = comm[u];
      const double ku = g.degree[u];
      touched.clear();
      for (const auto& [v, w] : g.adj[u]) {
        if (link[comm[v]] == 0.0) touched.push_back(comm[v]);
        link[comm[v]] += w;
      }
      tot[old] -= ku;
      // Gain of joining c relative to staying isolated, scaled by m2/2.
      const auto gain = [&](std::uint32_t c) { return link[c] - resolution * tot[c] * ku / g.m2; };
      std::uint32_t best = old;
      double best_gain = gain(old);
      for (auto c : touched) {
        const double gc = gain(c);
        if (gc > best_gain + 1e-12 * std::max(1.0, std::abs(best_gain))) {
          best = c;
          best_gain = gc;
        }
      }
      tot[best] += ku;
      comm[u] = best;
      if (best != old) ++moves;
      for (auto c : touched) link[c] = 0.0;
    }
    if (moves > 0) any = true;
    after_sweep();
    if (moves == 0) break;
  }
  return any;
}

}  // namespace

std::vector<std::uint32_t> split_disconnected(const CoEngagementGraph& graph,
                                              std::span<const std::uint32_t> labels) {
  const std::size_t n = graph.node_count();
  std::vector<std::uint32_t> out(n, UINT32_MAX);
  std::uint32_t next = 0;
  std::vector<std::uint32_t> stack;
  for (std::uint32_t s = 0; s < n; ++s) {
    if (out[s] != UINT32_MAX) continue;
    out[s] = next;
    stack.assign(1, s);
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (auto v : graph.neighbors(u))
        if (out[v] == UINT32_MAX && labels[v] == labels[u]) {
          out[v] = next;
          stack.push_back(v);
        }
    }
    ++next;
  }
  return out;
}

Clustering detect_communities(const CoEngagementGraph& graph, const CommunityOptions& options) {
  const std::size_t n = graph.node_count();
  if (n == 0) throw DataError("community detection needs a nonempty graph");
  Clustering out;
  out.resolution = options.resolution;
  out.seed = options.seed;
  out.min_size = options.min_size
                     ? options.min_size
                     : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n))));

  std::vector<std::uint32_t> node_comm(n);
  std::iota(node_comm.begin(), node_comm.end(), 0u);

  if (graph.total_weight() > 0.0) {
    Rng rng(options.seed);
    LevelGraph level = level_from(graph);
    std::vector<std::uint32_t> comm(n);
    for (std::size_t lvl = 0; lvl < options.max_levels; ++lvl) {
      const std::size_t ln = level.adj.size();
      comm.resize(ln);
      std::iota(comm.begin(), comm.end(), 0u);
      const auto record = [&] {
        std::vector<std::uint32_t> labels(n);
        for (std::size_t u = 0; u < n; ++u) labels[u] = comm[node_comm[u]];
        out.sweep_modularity.push_back(modularity(graph, labels, options.resolution));
      };
      const bool moved = local_moving(level, comm, options.resolution, rng, record);
      // Renumber communities densely and aggregate.
      std::vector<std::uint32_t> remap(ln, UINT32_MAX);
      std::uint32_t c = 0;
      for (std::size_t u = 0; u < ln; ++u)
        if (remap[comm[u]] == UINT32_MAX) remap[comm[u]] = c++;
      for (auto& x : node_comm) x = remap[comm[x]];
      if (!moved || c == ln) break;
      LevelGraph next;
      next.adj.resize(c);
      next.self.assign(c, 0.0);
      next.degree.assign(c, 0.0);
      next.m2 = level.m2;
      std::vector<std::unordered_map<std::uint32_t, double>> acc(c);
      for (std::size_t u = 0; u < ln; ++u) {
        const auto cu = remap[comm[u]];
        next.degree[cu] += level.degree[u];
        next.self[cu] += level.self[u];
        for (const auto& [v, w] : level.adj[u]) {
          const auto cv = remap[comm[v]];
          if (cu == cv) next.self[cu] += w;
          else acc[cu][cv] += w;
        }
      }
      for (std::uint32_t k = 0; k < c; ++k) {
        next.adj[k].assign(acc[k].begin(), acc[k].end());
        std::sort(next.adj[k].begin(), next.adj[k].end());
      }
      level = std::move(next);
    }
  }

  // Connectivity repair, then the residual merge.
  auto labels = split_disconnected(graph, node_comm);
  std::uint32_t count = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> size(count, 0);
  for (auto l : labels) ++size[l];
  std::size_t small = 0;
  for (auto s : size) small += s < out.min_size ? 1 : 0;
  std::vector<std::uint32_t> remap(count, UINT32_MAX);
  std::uint32_t next = 0;
  for (auto l : labels)
    if (remap[l] == UINT32_MAX && (size[l] >= out.min_size || small < 2)) remap[l] = next++;
  if (small >= 2) {
    out.residual = next;
    for (auto& r : remap)
      if (r == UINT32_MAX) r = next;
    ++next;
  }
  out.labels.resize(n);
  out.sizes.assign(next, 0);
  for (std::size_t u = 0; u < n; ++u) {
    out.labels[u] = remap[labels[u]];
    ++out.sizes[out.labels[u]];
  }
  out.modularity = modularity(graph, out.labels, options.resolution);
  return out;
}

std::vector<TimeSegment> instantiate_temporal(std::uint32_t tau, std::uint32_t n) {
  if (n < 1 || n > tau)
    throw ConfigError("temporal prior needs 1 <= n <= tau (n=" + std::to_string(n) +
                      ", tau=" + std::to_string(tau) + ")");
  std::vector<TimeSegment> out;
  const std::uint32_t base = tau / n, extra = tau % n;
  std::uint32_t first = 1;
  for (std::uint32_t s = 0; s < n; ++s) {
    const std::uint32_t len = base + (s < extra ? 1 : 0);
    out.push_back({first, first + len - 1});
    first += len;
  }
  return out;
}

PriorAxis temporal_axis(std::uint32_t tau, std::uint32_t n) {
  PriorAxis axis;
  axis.kind = PriorKind::temporal;
  axis.groups = n;
  axis.segments = instantiate_temporal(tau, n);
  return axis;
}

void apply_graph_clusters(ItemCatalog& catalog, const Clustering& clustering) {
  if (clustering.labels.size() != catalog.size())
    throw ConfigError("item clustering has " + std::to_string(clustering.labels.size()) +
                      " nodes but the catalog has " + std::to_string(catalog.size()) + " items");
  for (ItemId i = 0; i < catalog.size(); ++i) catalog.set_graph_cluster(i, clustering.labels[i]);
}

PriorAxis graph_axis(const Clustering& clustering) {
  PriorAxis axis;
  axis.kind = PriorKind::graph;
  axis.groups = static_cast<std::uint32_t>(clustering.cluster_count());
  return axis;
}

PriorAxis user_axis(const Clustering& clustering) {
  PriorAxis axis;
  axis.kind = PriorKind::user;
  axis.groups = static_cast<std::uint32_t>(clustering.cluster_count());
  axis.user_groups = clustering.labels;
  return axis;
}

std::string clustering_to_csv(const Clustering& clustering) {
  std::string s = "node,cluster\n";
  for (std::size_t u = 0; u < clustering.labels.size(); ++u)
    s += std::to_string(u) + "," + std::to_string(clustering.labels[u]) + "\n";
  return s;
}

std::string clustering_summary_json(const Clustering& clustering) {
  detail::Json j;
  j["modularity"] = clustering.modularity;
  j["clusters"] = clustering.cluster_count();
  j["sizes"] = clustering.sizes;
  j["resolution"] = clustering.resolution;
  j["seed"] = clustering.seed;
  j["min_size"] = clustering.min_size;
  j["residual_cluster"] = clustering.residual;
  j["sweep_modularity"] = clustering.sweep_modularity;
  return j.dump(2);
}

Clustering clustering_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "node,cluster") throw DataError("clustering CSV: bad header");
  Clustering c;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("clustering CSV: bad row '" + line + "'");
    std::size_t node = 0;
    std::uint32_t label = 0;
    try {
      node = std::stoul(line.substr(0, comma));
      label = static_cast<std::uint32_t>(std::stoul(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw DataError("clustering CSV: bad row '" + line + "'");
    }
    if (node != expected++) throw DataError("clustering CSV: nodes must be listed 0..n-1 in order");
    c.labels.push_back(label);
    if (label >= c.sizes.size()) c.sizes.resize(label + 1, 0);
    ++c.sizes[label];
  }
  return c;
}

}  // namespace phead
