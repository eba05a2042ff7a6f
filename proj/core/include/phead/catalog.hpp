// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace phead {

/// Dense item index into the catalog. External ids are remapped before use.
using ItemId = std::uint32_t;

struct Interaction {
  ItemId item = 0;
  std::uint8_t event = 0;
  std::int64_t time = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Item metadata used by the priors: multi-hot category flags, event
/// accessibility flags, and an optional graph-community id.
class ItemCatalog {
 public:
  static constexpr std::uint32_t kNoCluster = 0xFFFFFFFFu;

  ItemCatalog() = default;
  ItemCatalog(std::size_t count, std::uint16_t num_categories, std::uint16_t num_events);

  std::size_t size() const noexcept { return count_; }
  std::uint16_t num_categories() const noexcept { return num_categories_; }
  std::uint16_t num_events() const noexcept { return num_events_; }

  bool has_category(ItemId item, unsigned category) const;
  void set_category(ItemId item, unsigned category, bool value = true);
  std::vector<unsigned> categories(ItemId item) const;
  unsigned category_count(ItemId item) const;

  bool event_accessible(ItemId item, unsigned event) const;
  void set_event_accessible(ItemId item, unsigned event, bool value = true);

  std::optional<std::uint32_t> graph_cluster(ItemId item) const;
  void set_graph_cluster(ItemId item, std::optional<std::uint32_t> cluster);
  void clear_graph_clusters();
  bool has_graph_clusters() const noexcept;
  /// One past the largest assigned cluster id (0 when none assigned).
  std::uint32_t num_graph_clusters() const noexcept;

  /// Items with no active category flag.
  std::size_t uncategorized_count() const;

  /// Byte width of the packed category / event bit rows.
  std::size_t category_bytes() const noexcept { return category_bytes_; }
  std::size_t event_bytes() const noexcept { return event_bytes_; }

  friend bool operator==(const ItemCatalog&, const ItemCatalog&) = default;

 private:
  void check(ItemId item) const;

  std::size_t count_ = 0;
  std::uint16_t num_categories_ = 0;
  std::uint16_t num_events_ = 0;
  std::size_t category_bytes_ = 0;
  std::size_t event_bytes_ = 0;
  std::vector<std::uint8_t> category_bits_;
  std::vector<std::uint8_t> event_bits_;
  std::vector<std::uint32_t> cluster_;
};

/// Binary catalog file: "PHCAT1", u32 count, u16 C, u16 E, then per item the
/// category bytes, the event bytes and a u32 cluster id (0xFFFFFFFF = none).
/// All integers little-endian; bit j lives in byte j/8 at position j%8.
void write_catalog(const std::filesystem::path& path, const ItemCatalog& catalog);
ItemCatalog read_catalog(const std::filesystem::path& path);

}  // namespace phead
