// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace phead {

enum class PriorKind { item, temporal, event, graph, user, random, all };

std::string_view to_string(PriorKind kind) noexcept;
PriorKind parse_prior_kind(std::string_view name);

/// Inclusive range of 1-based horizon steps.
struct TimeSegment {
  std::uint32_t first = 1;
  std::uint32_t last = 1;
  friend bool operator==(const TimeSegment&, const TimeSegment&) = default;
};

/// One axis of human priors: a partition into `groups` groups plus the data
/// the compatibility sets and positive assignment are derived from.
struct PriorAxis {
  PriorKind kind = PriorKind::all;
  std::uint32_t groups = 1;
  /// Optional display names, one per group.
  std::vector<std::string> names;
  /// Temporal axes: one segment per group, partitioning 1..horizon.
  std::vector<TimeSegment> segments;
  /// Random axes: seed of the item shuffle.
  std::uint64_t seed = 0;
  /// User axes: group id per user id.
  std::vector<std::uint32_t> user_groups;

  std::string group_name(std::uint32_t group) const;
  friend bool operator==(const PriorAxis&, const PriorAxis&) = default;
};

struct PriorSpec {
  std::vector<PriorAxis> axes;

  std::size_t depth() const noexcept { return axes.size(); }
  /// Structural checks; temporal segments are checked against `horizon`.
  void validate(std::uint32_t horizon) const;
  friend bool operator==(const PriorSpec&, const PriorSpec&) = default;
};

/// How heads over several axes are composed.
enum class Composition { hierarchical, multiplicative, additive };
std::string_view to_string(Composition c) noexcept;
Composition parse_composition(std::string_view name);

/// Which group embedding the depth-d adapter adds: the parent's group
/// (e_{g_{d-1}}, zero at depth 1) or the node's own group (e_{g_d}).
enum class GroupEmbeddingIndex { parent, current };
std::string_view to_string(GroupEmbeddingIndex g) noexcept;
GroupEmbeddingIndex parse_group_embedding_index(std::string_view name);

/// Address of a head: one group per axis. kAnyGroup marks an axis the head
/// does not condition on (additive composition).
struct HeadPath {
  static constexpr std::int32_t kAnyGroup = -1;
  std::vector<std::int32_t> groups;

  friend auto operator<=>(const HeadPath&, const HeadPath&) = default;
  friend bool operator==(const HeadPath&, const HeadPath&) = default;
};

std::string to_string(const HeadPath& path);

/// JSON (de)serialization of a prior spec.
std::string prior_spec_to_json(const PriorSpec& spec);
PriorSpec prior_spec_from_json(std::string_view text);

}  // namespace phead
