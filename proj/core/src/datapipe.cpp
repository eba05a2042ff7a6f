// SPDX-License-Identifier: Apache-2.0
#include "phead/datapipe.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "json_util.hpp"
#include "phead/byte_io.hpp"
#include "phead/error.hpp"

namespace phead {

namespace {

constexpr char kUserMagic[6] = {'P', 'H', 'U', 'S', 'R', '1'};
constexpr char kPackMagic[6] = {'P', 'H', 'P', 'A', 'K', '1'};
constexpr std::size_t kUserHeader = 6 + 4;
constexpr int kFormatVersion = 1;

void put_user_block(std::ostream& out, const std::vector<Interaction>& records) {
  out.write(kUserMagic, 6);
  io::put(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    io::put(out, r.item);
    io::put(out, r.event);
    io::put(out, r.time);
  }
}

void check_sorted(const std::vector<Interaction>& records, std::size_t user) {
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].time < records[i - 1].time)
      throw DataError("user " + std::to_string(user) + ": timestamps decrease at record " +
                      std::to_string(i));
}

}  // namespace

void write_store(const std::filesystem::path& dir, std::span<const std::vector<Interaction>> users,
                 StoreLayout layout, std::span<const double> weights) {
  namespace fs = std::filesystem;
  if (!weights.empty() && weights.size() != users.size())
    throw ConfigError("store weights must have one entry per user");
  fs::create_directories(dir);
  detail::Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["layout"] = layout == StoreLayout::packed ? "packed" : "per_user";
  manifest["record_bytes"] = kRecordBytes;
  detail::Json entries = detail::Json::array();

  if (layout == StoreLayout::per_user) {
    fs::create_directories(dir / "users");
    for (std::size_t u = 0; u < users.size(); ++u) {
      check_sorted(users[u], u);
      const std::string rel = "users/" + std::to_string(u) + ".bin";
      std::ofstream out(dir / rel, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + (dir / rel).string());
      put_user_block(out, users[u]);
      if (!out) throw DataError("write failed: " + (dir / rel).string());
      entries.push_back({{"id", u},
                         {"count", users[u].size()},
                         {"weight", weights.empty() ? 1.0 : weights[u]},
                         {"file", rel}});
    }
  } else {
    const std::string rel = "users.pack";
    std::ofstream out(dir / rel, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / rel).string());
    out.write(kPackMagic, 6);
    io::put(out, static_cast<std::uint32_t>(users.size()));
    std::uint64_t offset = 6 + 4 + 8 * (users.size() + 1);
    std::vector<std::uint64_t> offsets;
    for (const auto& rec : users) {
      offsets.push_back(offset);
      offset += kUserHeader + kRecordBytes * rec.size();
    }
    offsets.push_back(offset);
    for (auto o : offsets) io::put(out, o);
    for (std::size_t u = 0; u < users.size(); ++u) {
      check_sorted(users[u], u);
      put_user_block(out, users[u]);
      entries.push_back({{"id", u},
                         {"count", users[u].size()},
                         {"weight", weights.empty() ? 1.0 : weights[u]},
                         {"file", rel},
                         {"offset", offsets[u]}});
    }
    if (!out) throw DataError("write failed: " + (dir / rel).string());
  }
  manifest["users"] = std::move(entries);
  std::ofstream m(dir / "manifest.json", std::ios::trunc);
  m << manifest.dump(1) << '\n';
  if (!m) throw DataError("cannot write manifest in " + dir.string());
}

MappedFile::MappedFile(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw DataError("cannot open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw DataError("cannot stat " + path.string());
  }
  size_ = static_cast<std::size_t>(st.st_size);
  if (size_ > 0) {
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (p == MAP_FAILED) {
      ::close(fd);
      throw DataError("cannot map " + path.string());
    }
    data_ = static_cast<const unsigned char*>(p);
  }
  ::close(fd);
}

MappedFile::~MappedFile() { release(); }

MappedFile::MappedFile(MappedFile&& other) noexcept : data_(other.data_), size_(other.size_) {
  other.data_ = nullptr;
  other.size_ = 0;
}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
  if (this != &other) {
    release();
    data_ = std::exchange(other.data_, nullptr);
    size_ = std::exchange(other.size_, 0);
  }
  return *this;
}

void MappedFile::release() noexcept {
  if (data_) ::munmap(const_cast<unsigned char*>(data_), size_);
  data_ = nullptr;
  size_ = 0;
}

UserStore UserStore::open(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  detail::Json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest.json in " + dir.string() + ": " + e.what());
  }
  UserStore store;
  store.dir_ = dir;
  try {
    if (m.at("format_version").get<int>() != kFormatVersion)
      throw DataError("unsupported store format version in " + dir.string());
    if (m.at("record_bytes").get<std::size_t>() != kRecordBytes)
      throw DataError("unexpected record size in " + dir.string());
    const auto layout = m.at("layout").get<std::string>();
    if (layout == "packed") store.layout_ = StoreLayout::packed;
    else if (layout == "per_user") store.layout_ = StoreLayout::per_user;
    else throw DataError("unknown store layout '" + layout + "'");
    for (const auto& u : m.at("users")) {
      UserEntry e;
      e.id = u.at("id").get<std::uint64_t>();
      e.count = u.at("count").get<std::uint32_t>();
      e.weight = u.value("weight", 1.0);
      e.file = u.at("file").get<std::string>();
      e.offset = u.value("offset", std::uint64_t{0});
      if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
        throw DataError("user " + std::to_string(e.id) + ": weight must be finite and >= 0");
      store.users_.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest.json in " + dir.string() + ": " + e.what());
  }
  if (store.layout_ == StoreLayout::packed) {
    if (store.users_.empty()) return store;
    const auto path = dir / store.users_.front().file;
    store.pack_ = MappedFile(path);
    if (store.pack_.size() < 10 || std::memcmp(store.pack_.data(), kPackMagic, 6) != 0)
      throw DataError(path.string() + ": bad magic");
    if (io::load<std::uint32_t>(store.pack_.data() + 6) != store.users_.size())
      throw DataError(path.string() + ": user count disagrees with manifest");
  }
  return store;
}

void UserStore::decode(const unsigned char* block, std::size_t block_size, const std::string& where,
                       std::size_t user, std::size_t start, std::size_t count,
                       std::vector<Interaction>& out) const {
  if (block_size < kUserHeader || std::memcmp(block, kUserMagic, 6) != 0)
    throw DataError(where + ": bad magic");
  const auto n = io::load<std::uint32_t>(block + 6);
  if (n != users_[user].count)
    throw DataError(where + ": header count " + std::to_string(n) + " but manifest says " +
                    std::to_string(users_[user].count));
  if (block_size < kUserHeader + kRecordBytes * static_cast<std::size_t>(n))
    throw DataError(where + ": truncated");
  if (start + count > n)
    throw DataError(where + ": window [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") past end " + std::to_string(n));
  out.resize(count);
  const unsigned char* p = block + kUserHeader + kRecordBytes * start;
  for (std::size_t i = 0; i < count; ++i, p += kRecordBytes) {
    out[i].item = io::load<std::uint32_t>(p);
    out[i].event = p[4];
    out[i].time = io::load<std::int64_t>(p + 5);
  }
}

std::vector<Interaction> UserStore::read_range(std::size_t user, std::size_t start,
                                               std::size_t count) const {
  if (user >= users_.size()) throw DataError("user index " + std::to_string(user) + " out of range");
  std::vector<Interaction> out;
  const auto& e = users_[user];
  if (layout_ == StoreLayout::packed) {
    const std::string where = (dir_ / e.file).string() + " (user " + std::to_string(e.id) + ")";
    if (e.offset >= pack_.size()) throw DataError(where + ": offset past end of file");
    decode(pack_.data() + e.offset, pack_.size() - e.offset, where, user, start, count, out);
  } else {
    const auto path = dir_ / e.file;
    MappedFile file(path);
    decode(file.data(), file.size(), path.string(), user, start, count, out);
  }
  return out;
}

void UserStore::fetch_window(std::size_t user, std::size_t start, std::size_t context_length,
                             std::size_t horizon, std::vector<Interaction>& context,
                             std::vector<Interaction>& targets) const {
  auto all = read_range(user, start, context_length + horizon);
  targets.assign(all.begin() + static_cast<long>(context_length), all.end());
  all.resize(context_length);
  context = std::move(all);
}

WindowIndex build_window_index(std::span<const std::uint32_t> lengths, std::uint32_t context_length,
                               std::uint32_t horizon, std::uint32_t stride, std::uint32_t holdout) {
  if (context_length < 1 || horizon < 1 || stride < 1)
    throw ConfigError("window index needs T >= 1, tau >= 1 and stride >= 1");
  WindowIndex index;
  index.context_length = context_length;
  index.horizon = horizon;
  index.stride = stride;
  index.user_begin.push_back(0);
  const std::uint64_t need = std::uint64_t{context_length} + horizon;
  for (std::size_t u = 0; u < lengths.size(); ++u) {
    const std::uint64_t usable = lengths[u] > holdout ? lengths[u] - holdout : 0;
    if (usable >= need) {
      const std::uint64_t last = usable - need;
      for (std::uint64_t s = 0; s <= last; s += stride)
        index.entries.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(s)});
    }
    index.user_begin.push_back(index.entries.size());
  }
  return index;
}

WindowIndex build_window_index(const UserStore& store, std::uint32_t context_length,
                               std::uint32_t horizon, std::uint32_t stride, std::uint32_t holdout) {
  std::vector<std::uint32_t> lengths(store.user_count());
  for (std::size_t u = 0; u < lengths.size(); ++u) lengths[u] = store.length(u);
  return build_window_index(lengths, context_length, horizon, stride, holdout);
}

std::string_view to_string(SamplingMode mode) noexcept {
  switch (mode) {
    case SamplingMode::uniform_window: return "uniform_window";
    case SamplingMode::user_weighted: return "user_weighted";
    case SamplingMode::recency_weighted: return "recency_weighted";
  }
  return "?";
}

SamplingMode parse_sampling_mode(std::string_view name) {
  if (name == "uniform_window") return SamplingMode::uniform_window;
  if (name == "user_weighted") return SamplingMode::user_weighted;
  if (name == "recency_weighted") return SamplingMode::recency_weighted;
  throw ConfigError("unknown sampling mode '" + std::string(name) + "'");
}

WindowSampler::WindowSampler(const WindowIndex& index, SamplingPolicy policy,
                             std::span<const double> user_weights)
    : index_(&index), policy_(policy) {
  if (index.empty()) throw DataError("cannot sample from an empty window index");
  if (policy.mode == SamplingMode::uniform_window) return;
  const std::size_t n_users = index.user_begin.size() - 1;
  if (!user_weights.empty() && user_weights.size() != n_users)
    throw ConfigError("sampling weights must have one entry per user");
  double total = 0.0;
  for (std::size_t u = 0; u < n_users; ++u) {
    if (index.user_windows(u) == 0) continue;
    const double w = user_weights.empty() ? 1.0 : user_weights[u];
    if (!(w >= 0.0)) throw ConfigError("sampling weights must be >= 0");
    if (w == 0.0) continue;
    total += w;
    users_.push_back(static_cast<std::uint32_t>(u));
    user_cdf_.push_back(total);
  }
  if (users_.empty()) throw DataError("every user with windows has zero sampling weight");
  if (policy.mode == SamplingMode::recency_weighted) {
    window_cdf_.resize(index.size());
    for (std::size_t u = 0; u < n_users; ++u) {
      double acc = 0.0;
      for (std::size_t e = index.user_begin[u]; e < index.user_begin[u + 1]; ++e) {
        acc += std::pow(static_cast<double>(e - index.user_begin[u] + 1), policy.recency_exponent);
        window_cdf_[e] = acc;
      }
    }
  }
}

WindowRef WindowSampler::draw(Rng& rng) const {
  const auto& idx = *index_;
  if (policy_.mode == SamplingMode::uniform_window) return idx.entries[rng.uniform_index(idx.size())];
  const double r = rng.uniform() * user_cdf_.back();
  auto it = std::upper_bound(user_cdf_.begin(), user_cdf_.end(), r);
  if (it == user_cdf_.end()) --it;
  const std::uint32_t u = users_[static_cast<std::size_t>(it - user_cdf_.begin())];
  const std::size_t begin = idx.user_begin[u], end = idx.user_begin[u + 1];
  if (policy_.mode == SamplingMode::user_weighted)
    return idx.entries[begin + rng.uniform_index(end - begin)];
  const double total = window_cdf_[end - 1];
  const double x = rng.uniform() * total;
  auto w = std::upper_bound(window_cdf_.begin() + static_cast<long>(begin),
                            window_cdf_.begin() + static_cast<long>(end), x);
  if (w == window_cdf_.begin() + static_cast<long>(end)) --w;
  return idx.entries[static_cast<std::size_t>(w - window_cdf_.begin())];
}

std::vector<WindowRef> sample_batch(const WindowIndex& index, const SamplingPolicy& policy,
                                    std::size_t batch_size, Rng& rng,
                                    std::span<const double> user_weights) {
  WindowSampler sampler(index, policy, user_weights);
  std::vector<WindowRef> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace phead
