// SPDX-License-Identifier: Apache-2.0
#include "phead/compat.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "phead/error.hpp"
#include "phead/rng.hpp"

namespace phead {

CompatibilitySet::CompatibilitySet(std::size_t universe, std::vector<ItemId> members)
    : universe_(universe), members_(std::move(members)), bits_((universe + 63) / 64, 0) {
  std::sort(members_.begin(), members_.end());
  members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
  for (ItemId i : members_) {
    if (i >= universe_) throw DataError("compatibility member outside catalog");
    bits_[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
}

CompatibilitySet CompatibilitySet::full(std::size_t universe) {
  std::vector<ItemId> all(universe);
  std::iota(all.begin(), all.end(), ItemId{0});
  return CompatibilitySet(universe, std::move(all));
}

std::size_t CompatibilitySet::rank(ItemId item) const noexcept {
  auto it = std::lower_bound(members_.begin(), members_.end(), item);
  if (it == members_.end() || *it != item) return members_.size();
  return static_cast<std::size_t>(it - members_.begin());
}

CompatibilitySet CompatibilitySet::intersect(const CompatibilitySet& other) const {
  std::vector<ItemId> out;
  std::set_intersection(members_.begin(), members_.end(), other.members_.begin(),
                        other.members_.end(), std::back_inserter(out));
  return CompatibilitySet(std::max(universe_, other.universe_), std::move(out));
}

std::vector<CompatibilitySet> axis_compatibility(const PriorAxis& axis, const ItemCatalog& catalog) {
  const std::size_t n = catalog.size();
  std::vector<std::vector<ItemId>> groups(axis.groups);
  switch (axis.kind) {
    case PriorKind::item:
      if (axis.groups != catalog.num_categories())
        throw ConfigError("item axis has " + std::to_string(axis.groups) +
                          " groups but the catalog has " +
                          std::to_string(catalog.num_categories()) + " categories");
      for (ItemId i = 0; i < n; ++i)
        for (unsigned c : catalog.categories(i)) groups[c].push_back(i);
      break;
    case PriorKind::event:
      if (axis.groups != catalog.num_events())
        throw ConfigError("event axis has " + std::to_string(axis.groups) +
                          " groups but the catalog has " + std::to_string(catalog.num_events()) +
                          " event types");
      for (ItemId i = 0; i < n; ++i)
        for (unsigned e = 0; e < catalog.num_events(); ++e)
          if (catalog.event_accessible(i, e)) groups[e].push_back(i);
      break;
    case PriorKind::graph:
      if (!catalog.has_graph_clusters())
        throw ConfigError("graph axis requires catalog graph clusters; none assigned");
      if (axis.groups != catalog.num_graph_clusters())
        throw ConfigError("graph axis has " + std::to_string(axis.groups) +
                          " groups but the catalog has " +
                          std::to_string(catalog.num_graph_clusters()) + " clusters");
      for (ItemId i = 0; i < n; ++i)
        if (auto c = catalog.graph_cluster(i)) groups[*c].push_back(i);
      break;
    case PriorKind::random: {
      std::vector<ItemId> order(n);
      std::iota(order.begin(), order.end(), ItemId{0});
      Rng rng(axis.seed);
      rng.shuffle(std::span<ItemId>(order));
      for (std::size_t p = 0; p < n; ++p) groups[p % axis.groups].push_back(order[p]);
      break;
    }
    case PriorKind::temporal:
    case PriorKind::user:
    case PriorKind::all:
      // These axes restrict training targets or users, not item eligibility.
      for (auto& g : groups) {
        g.resize(n);
        std::iota(g.begin(), g.end(), ItemId{0});
      }
      break;
  }
  std::vector<CompatibilitySet> out;
  out.reserve(groups.size());
  for (auto& g : groups) out.emplace_back(n, std::move(g));
  return out;
}

std::vector<HeadPath> enumerate_paths(const PriorSpec& spec) {
  std::vector<HeadPath> out;
  HeadPath current;
  current.groups.assign(spec.axes.size(), 0);
  if (spec.axes.empty()) return out;
  for (;;) {
    out.push_back(current);
    std::size_t d = spec.axes.size();
    while (d > 0) {
      --d;
      if (++current.groups[d] < static_cast<std::int32_t>(spec.axes[d].groups)) break;
      current.groups[d] = 0;
      if (d == 0) return out;
    }
  }
}

CompatMap build_compatibility(const PriorSpec& spec, const ItemCatalog& catalog,
                              CompatDiagnostics* diagnostics) {
  if (spec.axes.empty()) throw ConfigError("prior spec needs at least one axis");
  std::vector<std::vector<CompatibilitySet>> per_axis;
  per_axis.reserve(spec.axes.size());
  for (const auto& axis : spec.axes) per_axis.push_back(axis_compatibility(axis, catalog));

  CompatMap out;
  std::size_t empty = 0;
  for (auto& path : enumerate_paths(spec)) {
    CompatibilitySet leaf = per_axis[0][static_cast<std::size_t>(path.groups[0])];
    for (std::size_t d = 1; d < spec.axes.size(); ++d)
      leaf = leaf.intersect(per_axis[d][static_cast<std::size_t>(path.groups[d])]);
    empty += leaf.empty() ? 1 : 0;
    out.emplace(std::move(path), std::move(leaf));
  }
  if (diagnostics) {
    diagnostics->empty_leaves = empty;
    diagnostics->uncategorized_items = catalog.uncategorized_count();
  }
  return out;
}

std::vector<HeadPath> eligible_heads(ItemId item, const CompatMap& compat) {
  std::vector<HeadPath> out;
  for (const auto& [path, set] : compat)
    if (set.contains(item)) out.push_back(path);
  return out;
}

}  // namespace phead
