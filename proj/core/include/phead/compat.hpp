// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/prior_spec.hpp"

namespace phead {

/// The items a head may score. Kept both as a sorted id list (negative
/// sampling, iteration) and as a bitset (membership tests).
class CompatibilitySet {
 public:
  CompatibilitySet() = default;
  CompatibilitySet(std::size_t universe, std::vector<ItemId> members);

  static CompatibilitySet full(std::size_t universe);

  std::size_t universe() const noexcept { return universe_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }
  std::span<const ItemId> members() const noexcept { return members_; }

  bool contains(ItemId item) const noexcept {
    return item < universe_ && ((bits_[item >> 6] >> (item & 63)) & 1u);
  }
  /// Position of `item` in members(), or size() when absent.
  std::size_t rank(ItemId item) const noexcept;

  CompatibilitySet intersect(const CompatibilitySet& other) const;

  friend bool operator==(const CompatibilitySet& a, const CompatibilitySet& b) {
    return a.universe_ == b.universe_ && a.members_ == b.members_;
  }

 private:
  std::size_t universe_ = 0;
  std::vector<ItemId> members_;
  std::vector<std::uint64_t> bits_;
};

/// Per-group compatibility sets for a single axis.
std::vector<CompatibilitySet> axis_compatibility(const PriorAxis& axis, const ItemCatalog& catalog);

/// Leaf compatibility for every full path over the spec's axes: the
/// intersection of the per-axis group sets.
using CompatMap = std::map<HeadPath, CompatibilitySet>;

struct CompatDiagnostics {
  std::size_t empty_leaves = 0;
  std::size_t uncategorized_items = 0;
};

CompatMap build_compatibility(const PriorSpec& spec, const ItemCatalog& catalog,
                              CompatDiagnostics* diagnostics = nullptr);

/// Heads whose compatibility set contains `item`, in lexicographic path order.
std::vector<HeadPath> eligible_heads(ItemId item, const CompatMap& compat);

/// Every full path of the spec in lexicographic order.
std::vector<HeadPath> enumerate_paths(const PriorSpec& spec);

}  // namespace phead
