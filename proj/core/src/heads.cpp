// SPDX-License-Identifier: Apache-2.0
#include "phead/heads.hpp"

#include <algorithm>
#include <set>

#include "phead/error.hpp"

namespace phead {

HeadLayout HeadLayout::build(const PriorSpec& spec, const ItemCatalog& catalog,
                             Composition composition, GroupEmbeddingIndex embedding_index) {
  if (spec.axes.empty()) throw ConfigError("prior spec needs at least one axis");
  HeadLayout out;
  out.spec_ = spec;
  out.composition_ = composition;
  out.embedding_index_ = embedding_index;
  out.catalog_size_ = catalog.size();
  const std::size_t depth = spec.axes.size();

  std::vector<std::vector<CompatibilitySet>> per_axis;
  for (const auto& axis : spec.axes) per_axis.push_back(axis_compatibility(axis, catalog));

  std::set<std::uint32_t> embedded;
  if (composition == Composition::hierarchical) {
    // Prefixes of every length, parents before children.
    std::map<HeadPath, int> index;
    for (std::size_t d = 1; d <= depth; ++d) {
      PriorSpec prefix_spec;
      prefix_spec.axes.assign(spec.axes.begin(), spec.axes.begin() + static_cast<long>(d));
      for (auto& prefix : enumerate_paths(prefix_spec)) {
        AdapterNode node;
        node.depth = static_cast<std::uint32_t>(d);
        node.prefix = prefix;
        if (d > 1) {
          HeadPath parent{std::vector<std::int32_t>(prefix.groups.begin(), prefix.groups.end() - 1)};
          node.parent = index.at(parent);
        }
        if (embedding_index == GroupEmbeddingIndex::parent && d > 1) {
          node.embed_axis = static_cast<int>(d - 2);
          node.embed_group = static_cast<std::uint32_t>(prefix.groups[d - 2]);
        } else if (embedding_index == GroupEmbeddingIndex::current) {
          node.embed_axis = static_cast<int>(d - 1);
          node.embed_group = static_cast<std::uint32_t>(prefix.groups[d - 1]);
        }
        if (node.embed_axis >= 0) embedded.insert(static_cast<std::uint32_t>(node.embed_axis));
        index.emplace(prefix, static_cast<int>(out.nodes_.size()));
        out.nodes_.push_back(std::move(node));
      }
    }
    for (auto& path : enumerate_paths(spec)) {
      Head head;
      head.node = static_cast<std::size_t>(index.at(path));
      head.omega = per_axis[0][static_cast<std::size_t>(path.groups[0])];
      for (std::size_t d = 0; d < depth; ++d) {
        const auto g = static_cast<std::uint32_t>(path.groups[d]);
        if (d > 0) head.omega = head.omega.intersect(per_axis[d][g]);
        head.constraints.push_back({static_cast<std::uint32_t>(d), g});
      }
      head.path = std::move(path);
      out.heads_.push_back(std::move(head));
    }
  } else if (composition == Composition::multiplicative) {
    for (auto& path : enumerate_paths(spec)) {
      AdapterNode node;
      node.prefix = path;
      Head head;
      head.node = out.nodes_.size();
      out.nodes_.push_back(std::move(node));
      head.omega = per_axis[0][static_cast<std::size_t>(path.groups[0])];
      for (std::size_t d = 0; d < depth; ++d) {
        const auto g = static_cast<std::uint32_t>(path.groups[d]);
        if (d > 0) head.omega = head.omega.intersect(per_axis[d][g]);
        head.constraints.push_back({static_cast<std::uint32_t>(d), g});
      }
      head.path = std::move(path);
      out.heads_.push_back(std::move(head));
    }
  } else {
    for (std::size_t d = 0; d < depth; ++d) {
      for (std::uint32_t g = 0; g < spec.axes[d].groups; ++g) {
        HeadPath path;
        path.groups.assign(depth, HeadPath::kAnyGroup);
        path.groups[d] = static_cast<std::int32_t>(g);
        AdapterNode node;
        node.prefix = path;
        Head head;
        head.node = out.nodes_.size();
        out.nodes_.push_back(std::move(node));
        head.omega = per_axis[d][g];
        head.constraints.push_back({static_cast<std::uint32_t>(d), g});
        head.path = std::move(path);
        out.heads_.push_back(std::move(head));
      }
    }
    std::sort(out.heads_.begin(), out.heads_.end(),
              [](const Head& a, const Head& b) { return a.path < b.path; });
  }
  out.embedded_axes_.assign(embedded.begin(), embedded.end());
  return out;
}

bool HeadLayout::head_serves_user(std::size_t head, std::uint64_t user) const {
  for (const auto& c : heads_[head].constraints) {
    const auto& axis = spec_.axes[c.axis];
    if (axis.kind != PriorKind::user) continue;
    if (user >= axis.user_groups.size() || axis.user_groups[user] != c.group) return false;
  }
  return true;
}

std::vector<std::string> HeadLayout::group_names(std::size_t head) const {
  std::vector<std::string> out;
  for (const auto& c : heads_[head].constraints) out.push_back(spec_.axes[c.axis].group_name(c.group));
  return out;
}

std::string HeadLayout::describe(std::size_t head) const {
  std::string out;
  for (const auto& name : group_names(head)) {
    if (!out.empty()) out += "/";
    out += name;
  }
  return out;
}

std::size_t HeadLayout::empty_heads() const {
  return static_cast<std::size_t>(
      std::count_if(heads_.begin(), heads_.end(), [](const Head& h) { return h.omega.empty(); }));
}

CompatMap HeadLayout::compat_map() const {
  CompatMap out;
  for (const auto& h : heads_) out.emplace(h.path, h.omega);
  return out;
}

template <class S>
AdapterBank<S>::AdapterBank(std::shared_ptr<const HeadLayout> layout, std::size_t d_model,
                            ParamLayout& params)
    : layout_(std::move(layout)), d_model_(d_model) {
  for (std::size_t n = 0; n < layout_->nodes().size(); ++n)
    weight_ids_.push_back(params.add("heads.w" + std::to_string(n) + to_string(layout_->nodes()[n].prefix),
                                     d_model, d_model));
  for (auto axis : layout_->embedded_axes())
    embedding_ids_[axis] = params.add("heads.group_emb.axis" + std::to_string(axis),
                                      layout_->spec().axes[axis].groups, d_model);
  params_ = params;
}

template <class S>
std::size_t AdapterBank<S>::embedding_id(std::uint32_t axis) const {
  auto it = embedding_ids_.find(axis);
  return it == embedding_ids_.end() ? static_cast<std::size_t>(-1) : it->second;
}

template <class S>
void AdapterBank<S>::init(std::vector<S>& params) const {
  for (auto id : weight_ids_) params_.map(params, id).setZero();
  for (const auto& [axis, id] : embedding_ids_) params_.map(params, id).setZero();
}

template <class S>
void AdapterBank<S>::forward(const std::vector<S>& params, const Vec<S>& h, Cache& cache) const {
  const auto& nodes = layout_->nodes();
  cache.root = h;
  cache.pre.resize(nodes.size());
  cache.z.resize(nodes.size());
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const auto& node = nodes[n];
    const Vec<S>& parent = node.parent < 0 ? cache.root : cache.z[static_cast<std::size_t>(node.parent)];
    cache.pre[n] = params_.map(params, weight_ids_[n]) * parent;
    cache.z[n] = parent + cache.pre[n].unaryExpr([](S x) { return silu(x); });
    if (node.embed_axis >= 0) {
      const auto table = params_.map(params, embedding_ids_.at(static_cast<std::uint32_t>(node.embed_axis)));
      cache.z[n] += table.row(node.embed_group).transpose();
    }
  }
}

template <class S>
Vec<S> AdapterBank<S>::backward(const std::vector<S>& params, const Cache& cache,
                                const std::vector<Vec<S>>& d_queries, std::vector<S>& grads) const {
  const auto& nodes = layout_->nodes();
  std::vector<Vec<S>> dz(nodes.size());
  for (std::size_t k = 0; k < layout_->head_count(); ++k) {
    if (d_queries[k].size() == 0) continue;
    const auto n = layout_->heads()[k].node;
    if (dz[n].size() == 0) dz[n] = d_queries[k];
    else dz[n] += d_queries[k];
  }
  Vec<S> dh = Vec<S>::Zero(static_cast<Eigen::Index>(d_model_));
  for (std::size_t n = nodes.size(); n > 0; --n) {
    const std::size_t i = n - 1;
    if (dz[i].size() == 0) continue;
    const auto& node = nodes[i];
    const Vec<S>& parent = node.parent < 0 ? cache.root : cache.z[static_cast<std::size_t>(node.parent)];
    Vec<S> dpre = dz[i];
    for (Eigen::Index j = 0; j < dpre.size(); ++j) dpre(j) *= silu_grad(cache.pre[i](j));
    params_.map(grads, weight_ids_[i]) += dpre * parent.transpose();
    if (node.embed_axis >= 0) {
      auto table = params_.map(grads, embedding_ids_.at(static_cast<std::uint32_t>(node.embed_axis)));
      table.row(node.embed_group) += dz[i].transpose();
    }
    Vec<S> dparent = dz[i] + params_.map(params, weight_ids_[i]).transpose() * dpre;
    if (node.parent < 0) {
      dh += dparent;
    } else {
      auto& slot = dz[static_cast<std::size_t>(node.parent)];
      if (slot.size() == 0) slot = std::move(dparent);
      else slot += dparent;
    }
  }
  return dh;
}

template class AdapterBank<float>;
template class AdapterBank<double>;

std::string_view to_string(Fusion f) noexcept { return f == Fusion::max ? "max" : "avg"; }

Fusion parse_fusion(std::string_view name) {
  if (name == "max") return Fusion::max;
  if (name == "avg") return Fusion::avg;
  throw ConfigError("unknown fusion '" + std::string(name) + "'");
}

FusedScore fuse(ItemId item, std::span<const HeadScore> scores, Fusion method) {
  if (scores.empty()) throw ConfigError("fuse() needs at least one eligible head");
  FusedScore out{item, scores[0].score, scores[0].head};
  double sum = 0.0;
  for (const auto& s : scores) {
    sum += s.score;
    if (s.score > out.score) {
      out.score = s.score;
      out.head = s.head;
    }
  }
  if (method == Fusion::avg) out.score = sum / static_cast<double>(scores.size());
  return out;
}

template <class S>
std::vector<FusedScore> fuse_catalog(const HeadLayout& layout, const std::vector<Vec<S>>& queries,
                                     const std::vector<bool>& head_active,
                                     const ConstMatMap<S>& table, Fusion method,
                                     FusionDiagnostics* diagnostics) {
  const std::size_t n = layout.catalog_size();
  std::vector<double> best(n, 0.0), sum(n, 0.0);
  std::vector<std::size_t> arg(n, 0), count(n, 0);
  for (std::size_t k = 0; k < layout.head_count(); ++k) {
    if (!head_active[k]) continue;
    const auto& head = layout.heads()[k];
    for (ItemId i : head.omega.members()) {
      const double s = static_cast<double>(item_score(table, i, queries[k]));
      if (count[i] == 0 || s > best[i]) {
        best[i] = s;
        arg[i] = k;
      }
      sum[i] += s;
      ++count[i];
    }
  }
  std::vector<FusedScore> out;
  out.reserve(n);
  std::size_t unscoreable = 0;
  for (ItemId i = 0; i < n; ++i) {
    if (count[i] == 0) {
      ++unscoreable;
      continue;
    }
    const double score = method == Fusion::max ? best[i] : sum[i] / static_cast<double>(count[i]);
    out.push_back({i, score, arg[i]});
  }
  if (diagnostics) diagnostics->unscoreable_items = unscoreable;
  return out;
}

template std::vector<FusedScore> fuse_catalog<float>(const HeadLayout&,
                                                     const std::vector<Vec<float>>&,
                                                     const std::vector<bool>&,
                                                     const ConstMatMap<float>&, Fusion,
                                                     FusionDiagnostics*);
template std::vector<FusedScore> fuse_catalog<double>(const HeadLayout&,
                                                      const std::vector<Vec<double>>&,
                                                      const std::vector<bool>&,
                                                      const ConstMatMap<double>&, Fusion,
                                                      FusionDiagnostics*);

TopK retrieve_topk(std::span<const FusedScore> scores, std::size_t k) {
  if (k == 0) throw ConfigError("K must be >= 1");
  TopK out;
  out.items.assign(scores.begin(), scores.end());
  const auto better = [](const FusedScore& a, const FusedScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  };
  if (out.items.size() <= k) {
    out.short_list = out.items.size() < k;
    std::sort(out.items.begin(), out.items.end(), better);
  } else {
    std::partial_sort(out.items.begin(), out.items.begin() + static_cast<long>(k), out.items.end(),
                      better);
    out.items.resize(k);
  }
  return out;
}

}  // namespace phead
