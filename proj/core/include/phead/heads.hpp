// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/compat.hpp"
#include "phead/encoder.hpp"
#include "phead/params.hpp"
#include "phead/prior_spec.hpp"

namespace phead {

template <class S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <class S>
inline S silu(S x) {
  return x * sigmoid(x);
}

template <class S>
inline S silu_grad(S x) {
  const S s = sigmoid(x);
  return s * (S(1) + x * (S(1) - s));
}

/// Residual adapter q = h + SiLU(W h).
template <class S, class Weight>
Vec<S> flat_project(const Vec<S>& h, const Weight& w) {
  Vec<S> pre = w * h;
  return h + pre.unaryExpr([](S x) { return silu(x); });
}

struct AxisGroup {
  std::uint32_t axis = 0;
  std::uint32_t group = 0;
  friend bool operator==(const AxisGroup&, const AxisGroup&) = default;
};

/// One residual adapter. parent < 0 means it reads the user state directly.
struct AdapterNode {
  int parent = -1;
  std::uint32_t depth = 1;
  HeadPath prefix;
  /// Group embedding added to the output; embed_axis < 0 means none.
  int embed_axis = -1;
  std::uint32_t embed_group = 0;
};

/// A scoring head: the adapter whose output is its query, its
/// compatibility set and the (axis, group) constraints its positives obey.
struct Head {
  HeadPath path;
  std::size_t node = 0;
  CompatibilitySet omega;
  std::vector<AxisGroup> constraints;
};

/// The adapter graph for a prior spec under one composition strategy.
/// Nodes are stored parents-first.
class HeadLayout {
 public:
  static HeadLayout build(const PriorSpec& spec, const ItemCatalog& catalog,
                          Composition composition,
                          GroupEmbeddingIndex embedding_index = GroupEmbeddingIndex::parent);

  const PriorSpec& spec() const noexcept { return spec_; }
  Composition composition() const noexcept { return composition_; }
  GroupEmbeddingIndex embedding_index() const noexcept { return embedding_index_; }
  const std::vector<AdapterNode>& nodes() const noexcept { return nodes_; }
  const std::vector<Head>& heads() const noexcept { return heads_; }
  std::size_t head_count() const noexcept { return heads_.size(); }
  /// Axes that carry a group-embedding table.
  const std::vector<std::uint32_t>& embedded_axes() const noexcept { return embedded_axes_; }
  std::size_t catalog_size() const noexcept { return catalog_size_; }

  /// Whether head k may serve a user, given the user's group on each user axis.
  bool head_serves_user(std::size_t head, std::uint64_t user) const;
  /// Human-readable group names along the head's path, e.g. "ST/cat3".
  std::string describe(std::size_t head) const;
  std::vector<std::string> group_names(std::size_t head) const;
  /// Heads with an empty compatibility set; they never score or train.
  std::size_t empty_heads() const;
  /// Head path -> compatibility set.
  CompatMap compat_map() const;

 private:
  PriorSpec spec_;
  Composition composition_ = Composition::hierarchical;
  GroupEmbeddingIndex embedding_index_ = GroupEmbeddingIndex::parent;
  std::vector<AdapterNode> nodes_;
  std::vector<Head> heads_;
  std::vector<std::uint32_t> embedded_axes_;
  std::size_t catalog_size_ = 0;
};

/// Parameters and forward/backward of all adapters in a HeadLayout. Weights
/// and group embeddings start at zero, so every query equals the user state
/// at initialization.
template <class S>
class AdapterBank {
 public:
  struct Cache {
    Vec<S> root;
    std::vector<Vec<S>> pre;  // W z_parent per node
    std::vector<Vec<S>> z;    // node outputs
  };

  AdapterBank() = default;
  AdapterBank(std::shared_ptr<const HeadLayout> layout, std::size_t d_model, ParamLayout& params);

  std::size_t weight_id(std::size_t node) const { return weight_ids_.at(node); }
  /// Tensor id of the group embedding table of `axis`, or npos.
  std::size_t embedding_id(std::uint32_t axis) const;

  void init(std::vector<S>& params) const;

  /// Computes every node; fills `cache` (which is reused across calls).
  void forward(const std::vector<S>& params, const Vec<S>& h, Cache& cache) const;
  /// Given dL/dq for each head (zero vectors allowed), accumulates parameter
  /// gradients and returns dL/dh.
  Vec<S> backward(const std::vector<S>& params, const Cache& cache,
                  const std::vector<Vec<S>>& d_queries, std::vector<S>& grads) const;

  const Vec<S>& query(const Cache& cache, std::size_t head) const {
    return cache.z[layout_->heads()[head].node];
  }

 private:
  std::shared_ptr<const HeadLayout> layout_;
  std::size_t d_model_ = 0;
  ParamLayout params_;
  std::vector<std::size_t> weight_ids_;
  std::map<std::uint32_t, std::size_t> embedding_ids_;
};

extern template class AdapterBank<float>;
extern template class AdapterBank<double>;

/// Leaf queries keyed by head path.
template <class S>
std::map<HeadPath, Vec<S>> hierarchical_project(const HeadLayout& layout,
                                                const AdapterBank<S>& bank,
                                                const std::vector<S>& params, const Vec<S>& h) {
  typename AdapterBank<S>::Cache cache;
  bank.forward(params, h, cache);
  std::map<HeadPath, Vec<S>> out;
  for (std::size_t k = 0; k < layout.head_count(); ++k)
    out.emplace(layout.heads()[k].path, bank.query(cache, k));
  return out;
}

template <class S>
struct ItemScore {
  ItemId item = 0;
  S score = 0;
};

/// Compatibility-masked scores: only members of omega get an entry; every
/// other item is implicitly at minus infinity and never ranked.
template <class S>
std::vector<ItemScore<S>> masked_scores(const Vec<S>& query, const CompatibilitySet& omega,
                                        const ConstMatMap<S>& table) {
  std::vector<ItemScore<S>> out;
  out.reserve(omega.size());
  for (ItemId i : omega.members()) out.push_back({i, item_score(table, i, query)});
  return out;
}

enum class Fusion { max, avg };
std::string_view to_string(Fusion f) noexcept;
Fusion parse_fusion(std::string_view name);

struct HeadScore {
  std::size_t head = 0;
  double score = 0;
};

struct FusedScore {
  ItemId item = 0;
  double score = 0;
  /// Head with the highest individual score (the explanation).
  std::size_t head = 0;
};

/// Fuses the eligible heads' scores of one item. Ties in the argmax go to
/// the earliest entry. `scores` must be non-empty.
FusedScore fuse(ItemId item, std::span<const HeadScore> scores, Fusion method);

struct FusionDiagnostics {
  std::size_t unscoreable_items = 0;
};

/// Scores the whole catalog through all heads that serve the user and fuses
/// per item. Items without an eligible head are left out.
template <class S>
std::vector<FusedScore> fuse_catalog(const HeadLayout& layout, const std::vector<Vec<S>>& queries,
                                     const std::vector<bool>& head_active,
                                     const ConstMatMap<S>& table, Fusion method,
                                     FusionDiagnostics* diagnostics = nullptr);

extern template std::vector<FusedScore> fuse_catalog<float>(
    const HeadLayout&, const std::vector<Vec<float>>&, const std::vector<bool>&,
    const ConstMatMap<float>&, Fusion, FusionDiagnostics*);
extern template std::vector<FusedScore> fuse_catalog<double>(
    const HeadLayout&, const std::vector<Vec<double>>&, const std::vector<bool>&,
    const ConstMatMap<double>&, Fusion, FusionDiagnostics*);

struct TopK {
  std::vector<FusedScore> items;
  /// Fewer than K scoreable items were available.
  bool short_list = false;
};

/// Highest scores first; equal scores by ascending item id.
TopK retrieve_topk(std::span<const FusedScore> scores, std::size_t k);

/// Adapter parameters added by one flat head.
constexpr std::size_t head_parameter_count(std::size_t d_model) { return d_model * d_model; }

}  // namespace phead
