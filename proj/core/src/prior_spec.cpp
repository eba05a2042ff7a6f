// SPDX-License-Identifier: Apache-2.0
#include "phead/prior_spec.hpp"

#include <array>
#include <utility>

#include "json_util.hpp"
#include "phead/error.hpp"

namespace phead {

namespace {
constexpr std::array<std::pair<PriorKind, std::string_view>, 7> kKindNames = {{
    {PriorKind::item, "item"},
    {PriorKind::temporal, "temporal"},
    {PriorKind::event, "event"},
    {PriorKind::graph, "graph"},
    {PriorKind::user, "user"},
    {PriorKind::random, "random"},
    {PriorKind::all, "all"},
}};
}  // namespace

std::string_view to_string(PriorKind kind) noexcept {
  for (auto [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

PriorKind parse_prior_kind(std::string_view name) {
  for (auto [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError("unknown prior kind '" + std::string(name) + "'");
}

std::string_view to_string(Composition c) noexcept {
  switch (c) {
    case Composition::hierarchical: return "hierarchical";
    case Composition::multiplicative: return "multiplicative";
    case Composition::additive: return "additive";
  }
  return "?";
}

Composition parse_composition(std::string_view name) {
  if (name == "hierarchical") return Composition::hierarchical;
  if (name == "multiplicative") return Composition::multiplicative;
  if (name == "additive") return Composition::additive;
  throw ConfigError("unknown composition '" + std::string(name) + "'");
}

std::string_view to_string(GroupEmbeddingIndex g) noexcept {
  return g == GroupEmbeddingIndex::parent ? "parent" : "current";
}

GroupEmbeddingIndex parse_group_embedding_index(std::string_view name) {
  if (name == "parent") return GroupEmbeddingIndex::parent;
  if (name == "current") return GroupEmbeddingIndex::current;
  throw ConfigError("unknown group embedding index '" + std::string(name) + "'");
}

std::string PriorAxis::group_name(std::uint32_t group) const {
  if (group < names.size()) return names[group];
  switch (kind) {
    case PriorKind::temporal:
      if (groups == 2) return group == 0 ? "ST" : "LT";
      return "seg" + std::to_string(group + 1);
    case PriorKind::item: return "cat" + std::to_string(group);
    case PriorKind::event: return "event" + std::to_string(group);
    case PriorKind::graph: return "C" + std::to_string(group);
    case PriorKind::user: return "U" + std::to_string(group);
    case PriorKind::random: return "R" + std::to_string(group);
    case PriorKind::all: return "all" + std::to_string(group);
  }
  return std::to_string(group);
}

void PriorSpec::validate(std::uint32_t horizon) const {
  if (axes.empty()) throw ConfigError("prior spec needs at least one axis");
  for (std::size_t a = 0; a < axes.size(); ++a) {
    const auto& axis = axes[a];
    const std::string where = "prior axis " + std::to_string(a) + " (" +
                              std::string(to_string(axis.kind)) + ")";
    if (axis.groups == 0) throw ConfigError(where + ": group count must be >= 1");
    if (!axis.names.empty() && axis.names.size() != axis.groups)
      throw ConfigError(where + ": names must list one entry per group");
    if (axis.kind == PriorKind::temporal) {
      if (axis.segments.size() != axis.groups)
        throw ConfigError(where + ": needs one segment per group");
      std::uint32_t next = 1;
      for (const auto& s : axis.segments) {
        if (s.first != next || s.last < s.first)
          throw ConfigError(where + ": segments must be contiguous and non-overlapping");
        next = s.last + 1;
      }
      if (next != horizon + 1)
        throw ConfigError(where + ": segments must cover horizon 1.." + std::to_string(horizon));
    }
    if (axis.kind == PriorKind::user) {
      if (axis.user_groups.empty()) throw ConfigError(where + ": missing user group table");
      for (auto g : axis.user_groups)
        if (g >= axis.groups) throw ConfigError(where + ": user group id out of range");
    }
  }
}

std::string to_string(const HeadPath& path) {
  std::string out = "(";
  for (std::size_t i = 0; i < path.groups.size(); ++i) {
    if (i) out += ",";
    out += path.groups[i] == HeadPath::kAnyGroup ? "*" : std::to_string(path.groups[i]);
  }
  return out + ")";
}

namespace detail {

Json prior_spec_to_json_value(const PriorSpec& spec) {
  Json axes = Json::array();
  for (const auto& axis : spec.axes) {
    Json j;
    j["kind"] = std::string(to_string(axis.kind));
    j["groups"] = axis.groups;
    if (!axis.names.empty()) j["names"] = axis.names;
    if (!axis.segments.empty()) {
      Json segs = Json::array();
      for (const auto& s : axis.segments) segs.push_back({s.first, s.last});
      j["segments"] = segs;
    }
    if (axis.kind == PriorKind::random) j["seed"] = axis.seed;
    if (!axis.user_groups.empty()) j["user_groups"] = axis.user_groups;
    axes.push_back(std::move(j));
  }
  return Json{{"axes", axes}};
}

PriorSpec prior_spec_from_json_value(const Json& j) {
  check_keys(j, "prior spec", {"axes"});
  PriorSpec spec;
  for (const auto& a : j.at("axes")) {
    check_keys(a, "prior axis", {"kind", "groups", "names", "segments", "seed", "user_groups"});
    PriorAxis axis;
    axis.kind = parse_prior_kind(a.at("kind").get<std::string>());
    axis.groups = get_or<std::uint32_t>(a, "groups", 1);
    axis.names = get_or<std::vector<std::string>>(a, "names", {});
    if (auto it = a.find("segments"); it != a.end())
      for (const auto& s : *it)
        axis.segments.push_back({s.at(0).get<std::uint32_t>(), s.at(1).get<std::uint32_t>()});
    axis.seed = get_or<std::uint64_t>(a, "seed", 0);
    axis.user_groups = get_or<std::vector<std::uint32_t>>(a, "user_groups", {});
    spec.axes.push_back(std::move(axis));
  }
  return spec;
}

}  // namespace detail

std::string prior_spec_to_json(const PriorSpec& spec) {
  return detail::prior_spec_to_json_value(spec).dump();
}

PriorSpec prior_spec_from_json(std::string_view text) {
  try {
    return detail::prior_spec_from_json_value(detail::Json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid prior spec JSON: ") + e.what());
  }
}

}  // namespace phead
