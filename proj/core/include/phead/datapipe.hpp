// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "phead/catalog.hpp"
#include "phead/rng.hpp"

namespace phead {

/// Size of one on-disk interaction record: u32 item, u8 event, i64 time.
inline constexpr std::size_t kRecordBytes = 13;

enum class StoreLayout { per_user, packed };

/// Writes a store directory: manifest.json plus either users/<id>.bin (one
/// "PHUSR1" file per user) or a single users.pack holding the same blocks
/// behind an offset table. Records must be time-ordered per user.
void write_store(const std::filesystem::path& dir, std::span<const std::vector<Interaction>> users,
                 StoreLayout layout = StoreLayout::per_user, std::span<const double> weights = {});

/// Read-only memory mapping of a whole file.
class MappedFile {
 public:
  MappedFile() = default;
  explicit MappedFile(const std::filesystem::path& path);
  ~MappedFile();
  MappedFile(MappedFile&& other) noexcept;
  MappedFile& operator=(MappedFile&& other) noexcept;
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  const unsigned char* data() const noexcept { return data_; }
  std::size_t size() const noexcept { return size_; }

 private:
  void release() noexcept;
  const unsigned char* data_ = nullptr;
  std::size_t size_ = 0;
};

/// Immutable view of a store directory. Windows are read through memory
/// mappings, so only the touched records are paged in.
class UserStore {
 public:
  struct UserEntry {
    std::uint64_t id = 0;
    std::uint32_t count = 0;
    double weight = 1.0;
    std::string file;
    std::uint64_t offset = 0;
  };

  static UserStore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  StoreLayout layout() const noexcept { return layout_; }
  std::size_t user_count() const noexcept { return users_.size(); }
  std::uint32_t length(std::size_t user) const { return users_.at(user).count; }
  double weight(std::size_t user) const { return users_.at(user).weight; }
  const UserEntry& entry(std::size_t user) const { return users_.at(user); }

  /// Records [start, start + count) of a user.
  std::vector<Interaction> read_range(std::size_t user, std::size_t start, std::size_t count) const;
  std::vector<Interaction> read_all(std::size_t user) const { return read_range(user, 0, length(user)); }

  /// context = records[start, start+T), horizon = records[start+T, start+T+tau).
  void fetch_window(std::size_t user, std::size_t start, std::size_t context_length,
                    std::size_t horizon, std::vector<Interaction>& context,
                    std::vector<Interaction>& targets) const;

 private:
  void decode(const unsigned char* block, std::size_t block_size, const std::string& where,
              std::size_t user, std::size_t start, std::size_t count,
              std::vector<Interaction>& out) const;

  std::filesystem::path dir_;
  StoreLayout layout_ = StoreLayout::per_user;
  std::vector<UserEntry> users_;
  MappedFile pack_;
};

struct WindowRef {
  std::uint32_t user = 0;
  std::uint32_t start = 0;
  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

/// Start offsets of every valid (context, horizon) window.
struct WindowIndex {
  std::uint32_t context_length = 0;
  std::uint32_t horizon = 0;
  std::uint32_t stride = 1;
  std::vector<WindowRef> entries;
  /// Entries of user u are entries[user_begin[u], user_begin[u + 1]).
  std::vector<std::size_t> user_begin;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  std::size_t user_windows(std::size_t user) const { return user_begin[user + 1] - user_begin[user]; }
};

/// Windows per user of length L: starts 0, s, 2s, ... with
/// start + T + tau <= L - holdout.
WindowIndex build_window_index(const UserStore& store, std::uint32_t context_length,
                               std::uint32_t horizon, std::uint32_t stride,
                               std::uint32_t holdout = 0);
/// Same rule for an in-memory list of user lengths.
WindowIndex build_window_index(std::span<const std::uint32_t> lengths, std::uint32_t context_length,
                               std::uint32_t horizon, std::uint32_t stride,
                               std::uint32_t holdout = 0);

enum class SamplingMode { uniform_window, user_weighted, recency_weighted };
std::string_view to_string(SamplingMode mode) noexcept;
SamplingMode parse_sampling_mode(std::string_view name);

struct SamplingPolicy {
  SamplingMode mode = SamplingMode::uniform_window;
  /// Window j (0-based) of a user is drawn with weight (j + 1)^exponent.
  double recency_exponent = 1.0;
};

/// Draws window references under a sampling policy. User weights default to
/// 1 and are only consulted by the user- and recency-weighted modes.
class WindowSampler {
 public:
  WindowSampler(const WindowIndex& index, SamplingPolicy policy,
                std::span<const double> user_weights = {});
  WindowRef draw(Rng& rng) const;

 private:
  const WindowIndex* index_;
  SamplingPolicy policy_;
  std::vector<std::uint32_t> users_;
  std::vector<double> user_cdf_;
  std::vector<double> window_cdf_;  // per entry, cumulative within its user
};

std::vector<WindowRef> sample_batch(const WindowIndex& index, const SamplingPolicy& policy,
                                    std::size_t batch_size, Rng& rng,
                                    std::span<const double> user_weights = {});

}  // namespace phead
