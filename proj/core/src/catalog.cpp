// SPDX-License-Identifier: Apache-2.0
#include "phead/catalog.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <string>

#include "phead/byte_io.hpp"
#include "phead/error.hpp"

namespace phead {

namespace {
constexpr std::array<char, 6> kCatalogMagic = {'P', 'H', 'C', 'A', 'T', '1'};

bool test_bit(const std::vector<std::uint8_t>& bits, std::size_t row_bytes, std::size_t row,
              unsigned bit) {
  return (bits[row * row_bytes + bit / 8] >> (bit % 8)) & 1u;
}

void assign_bit(std::vector<std::uint8_t>& bits, std::size_t row_bytes, std::size_t row,
                unsigned bit, bool value) {
  auto& byte = bits[row * row_bytes + bit / 8];
  const auto mask = static_cast<std::uint8_t>(1u << (bit % 8));
  byte = value ? static_cast<std::uint8_t>(byte | mask) : static_cast<std::uint8_t>(byte & ~mask);
}
}  // namespace

ItemCatalog::ItemCatalog(std::size_t count, std::uint16_t num_categories, std::uint16_t num_events)
    : count_(count),
      num_categories_(num_categories),
      num_events_(num_events),
      category_bytes_((num_categories + 7u) / 8u),
      event_bytes_((num_events + 7u) / 8u),
      category_bits_(count * category_bytes_, 0),
      event_bits_(count * event_bytes_, 0),
      cluster_(count, kNoCluster) {}

void ItemCatalog::check(ItemId item) const {
  if (item >= count_)
    throw DataError("item id " + std::to_string(item) + " outside catalog of " +
                    std::to_string(count_));
}

bool ItemCatalog::has_category(ItemId item, unsigned category) const {
  check(item);
  if (category >= num_categories_) return false;
  return test_bit(category_bits_, category_bytes_, item, category);
}

void ItemCatalog::set_category(ItemId item, unsigned category, bool value) {
  check(item);
  if (category >= num_categories_)
    throw ConfigError("category " + std::to_string(category) + " out of range");
  assign_bit(category_bits_, category_bytes_, item, category, value);
}

std::vector<unsigned> ItemCatalog::categories(ItemId item) const {
  std::vector<unsigned> out;
  for (unsigned c = 0; c < num_categories_; ++c)
    if (has_category(item, c)) out.push_back(c);
  return out;
}

unsigned ItemCatalog::category_count(ItemId item) const {
  unsigned n = 0;
  for (unsigned c = 0; c < num_categories_; ++c) n += has_category(item, c) ? 1u : 0u;
  return n;
}

bool ItemCatalog::event_accessible(ItemId item, unsigned event) const {
  check(item);
  if (event >= num_events_) return false;
  return test_bit(event_bits_, event_bytes_, item, event);
}

void ItemCatalog::set_event_accessible(ItemId item, unsigned event, bool value) {
  check(item);
  if (event >= num_events_) throw ConfigError("event " + std::to_string(event) + " out of range");
  assign_bit(event_bits_, event_bytes_, item, event, value);
}

std::optional<std::uint32_t> ItemCatalog::graph_cluster(ItemId item) const {
  check(item);
  if (cluster_[item] == kNoCluster) return std::nullopt;
  return cluster_[item];
}

void ItemCatalog::set_graph_cluster(ItemId item, std::optional<std::uint32_t> cluster) {
  check(item);
  if (cluster && *cluster == kNoCluster) throw ConfigError("cluster id 0xFFFFFFFF is reserved");
  cluster_[item] = cluster.value_or(kNoCluster);
}

void ItemCatalog::clear_graph_clusters() { std::fill(cluster_.begin(), cluster_.end(), kNoCluster); }

bool ItemCatalog::has_graph_clusters() const noexcept {
  return std::any_of(cluster_.begin(), cluster_.end(), [](auto c) { return c != kNoCluster; });
}

std::uint32_t ItemCatalog::num_graph_clusters() const noexcept {
  std::uint32_t n = 0;
  for (auto c : cluster_)
    if (c != kNoCluster) n = std::max(n, c + 1);
  return n;
}

std::size_t ItemCatalog::uncategorized_count() const {
  std::size_t n = 0;
  for (ItemId i = 0; i < count_; ++i) n += category_count(i) == 0 ? 1 : 0;
  return n;
}

void write_catalog(const std::filesystem::path& path, const ItemCatalog& catalog) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open catalog for writing: " + path.string());
  out.write(kCatalogMagic.data(), kCatalogMagic.size());
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(catalog.size()));
  io::put<std::uint16_t>(out, catalog.num_categories());
  io::put<std::uint16_t>(out, catalog.num_events());
  std::vector<std::uint8_t> row(std::max(catalog.category_bytes(), catalog.event_bytes()));
  for (ItemId i = 0; i < catalog.size(); ++i) {
    std::fill(row.begin(), row.end(), 0);
    for (unsigned c = 0; c < catalog.num_categories(); ++c)
      if (catalog.has_category(i, c)) row[c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(catalog.category_bytes()));
    std::fill(row.begin(), row.end(), 0);
    for (unsigned e = 0; e < catalog.num_events(); ++e)
      if (catalog.event_accessible(i, e)) row[e / 8] |= static_cast<std::uint8_t>(1u << (e % 8));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(catalog.event_bytes()));
    io::put<std::uint32_t>(out, catalog.graph_cluster(i).value_or(ItemCatalog::kNoCluster));
  }
  if (!out) throw DataError("failed writing catalog: " + path.string());
}

ItemCatalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open catalog: " + path.string());
  std::array<char, 6> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCatalogMagic) throw DataError("bad catalog magic in " + path.string());
  std::uint32_t count = 0;
  std::uint16_t num_categories = 0, num_events = 0;
  if (!io::get(in, count) || !io::get(in, num_categories) || !io::get(in, num_events))
    throw DataError("truncated catalog header in " + path.string());
  ItemCatalog catalog(count, num_categories, num_events);
  std::vector<std::uint8_t> cat(catalog.category_bytes()), ev(catalog.event_bytes());
  for (ItemId i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(cat.data()), static_cast<std::streamsize>(cat.size()));
    in.read(reinterpret_cast<char*>(ev.data()), static_cast<std::streamsize>(ev.size()));
    std::uint32_t cluster = 0;
    if (!in || !io::get(in, cluster))
      throw DataError("truncated catalog record " + std::to_string(i) + " in " + path.string());
    for (unsigned c = 0; c < num_categories; ++c)
      if ((cat[c / 8] >> (c % 8)) & 1u) catalog.set_category(i, c);
    for (unsigned e = 0; e < num_events; ++e)
      if ((ev[e / 8] >> (e % 8)) & 1u) catalog.set_event_accessible(i, e);
    if (cluster != ItemCatalog::kNoCluster) catalog.set_graph_cluster(i, cluster);
  }
  return catalog;
}

}  // namespace phead
