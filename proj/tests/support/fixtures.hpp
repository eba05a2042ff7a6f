// Shared helpers for the test binaries.
#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/rng.hpp"

namespace phead::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "phead") {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Catalog where item i has category i % C, every event is accessible, and
/// every `overlap_every`-th item also carries category (i + 1) % C.
inline ItemCatalog striped_catalog(std::size_t n, std::uint16_t categories, std::uint16_t events = 1,
                                   std::size_t overlap_every = 0) {
  ItemCatalog c(n, categories, events);
  for (ItemId i = 0; i < n; ++i) {
    c.set_category(i, i % categories);
    if (overlap_every && i % overlap_every == 0) c.set_category(i, (i + 1) % categories);
    for (unsigned e = 0; e < events; ++e) c.set_event_accessible(i, e);
  }
  return c;
}

/// Random catalog with 1-2 categories per item (some items uncategorized
/// when allow_empty) and random event access (event 0 always accessible).
inline ItemCatalog random_catalog(Rng& rng, std::size_t n, std::uint16_t categories,
                                  std::uint16_t events, bool allow_empty = false) {
  ItemCatalog c(n, categories, events);
  for (ItemId i = 0; i < n; ++i) {
    if (!(allow_empty && rng.uniform() < 0.1)) {
      c.set_category(i, static_cast<unsigned>(rng.uniform_index(categories)));
      if (rng.uniform() < 0.3) c.set_category(i, static_cast<unsigned>(rng.uniform_index(categories)));
    }
    c.set_event_accessible(i, 0);
    for (unsigned e = 1; e < events; ++e)
      if (rng.uniform() < 0.7) c.set_event_accessible(i, e);
  }
  return c;
}

inline std::vector<Interaction> random_sequence(Rng& rng, std::size_t length, std::size_t items,
                                                std::uint16_t events = 1) {
  std::vector<Interaction> out(length);
  std::int64_t t = 1000;
  for (auto& x : out) {
    x.item = static_cast<ItemId>(rng.uniform_index(items));
    x.event = static_cast<std::uint8_t>(rng.uniform_index(events));
    t += 1 + static_cast<std::int64_t>(rng.uniform_index(100));
    x.time = t;
  }
  return out;
}

}  // namespace phead::testing
