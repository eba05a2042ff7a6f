// SPDX-License-Identifier: Apache-2.0
#include "phead/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"
#include "phead/error.hpp"
#include "phead/rng.hpp"

namespace phead {

namespace {

constexpr std::uint64_t kItemStream = 0x17e35ULL;

std::vector<double> dirichlet(Rng& rng, const std::vector<unsigned>& support, std::size_t dim,
                              double alpha) {
  std::vector<double> p(dim, 0.0);
  double total = 0.0;
  for (auto c : support) {
    p[c] = rng.gamma(alpha);
    total += p[c];
  }
  if (total <= 0.0) {
    // Every draw underflowed; fall back to a single category.
    p[support[rng.uniform_index(support.size())]] = 1.0;
    return p;
  }
  for (auto& x : p) x /= total;
  return p;
}

}  // namespace

void WorldConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ConfigError("world config: " + m); };
  if (num_categories < 1) fail("need at least one category");
  if (num_items < num_categories) fail("every category needs an item (num_items < num_categories)");
  if (num_users < 1) fail("need at least one user");
  if (seq_len < 2) fail("seq_len must be >= 2");
  if (subclusters < 1) fail("subclusters must be >= 1");
  if (!(overlap_rate >= 0.0 && overlap_rate <= 1.0)) fail("overlap_rate must be in [0, 1]");
  if (!(focus >= 0.0 && focus <= 1.0)) fail("focus must be in [0, 1]");
  if (!(stickiness >= 0.0 && stickiness < 1.0)) fail("stickiness must be in [0, 1)");
  if (!(concentration > 0.0)) fail("concentration must be > 0");
  if (categories_per_user > num_categories) fail("categories_per_user exceeds num_categories");
  if (event_rates.empty() || event_rates.size() > 255) fail("need 1..255 event types");
  if (event_access.size() != event_rates.size()) fail("event_access must match event_rates");
  double total = 0.0;
  for (double r : event_rates) {
    if (!(r >= 0.0 && r <= 1.0)) fail("event rates must lie in [0, 1]");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("event rates must sum to 1");
  for (double a : event_access)
    if (!(a >= 0.0 && a <= 1.0)) fail("event_access entries must lie in [0, 1]");
}

std::vector<double> PlantedWorld::mixture(std::size_t user, std::size_t step) const {
  const auto& a = mix_start[user];
  if (!config.drift) return a;
  const auto& b = mix_end[user];
  const double len = static_cast<double>(sequences[user].size());
  const double lambda = len > 1 ? std::min(1.0, static_cast<double>(step) / (len - 1.0)) : 0.0;
  std::vector<double> out(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) out[c] = (1.0 - lambda) * a[c] + lambda * b[c];
  return out;
}

std::vector<ItemId> PlantedWorld::category_items(unsigned category) const {
  std::vector<ItemId> out;
  for (const auto& sub : members[category]) out.insert(out.end(), sub.begin(), sub.end());
  std::sort(out.begin(), out.end());
  return out;
}

double PlantedWorld::item_probability(std::size_t user, unsigned category, ItemId item) const {
  if (!catalog.has_category(item, category)) return 0.0;
  std::size_t total = 0;
  for (const auto& sub : members[category]) total += sub.size();
  const auto fav = favourite[user][category];
  double p = (1.0 - config.focus) / static_cast<double>(total);
  if (item_subcluster[item] == fav) p += config.focus / static_cast<double>(members[category][fav].size());
  return p;
}

PlantedWorld generate(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  PlantedWorld w;
  w.config = config;
  w.seed = seed;
  const std::size_t n = config.num_items, C = config.num_categories, S = config.subclusters;
  const std::size_t E = config.num_events();

  Rng items(derive_seed(seed, kItemStream));
  w.catalog = ItemCatalog(n, static_cast<std::uint16_t>(C), static_cast<std::uint16_t>(E));
  w.item_subcluster.assign(n, 0);
  w.members.assign(C, std::vector<std::vector<ItemId>>(S));
  std::vector<ItemId> order(n);
  std::iota(order.begin(), order.end(), ItemId{0});
  items.shuffle(std::span<ItemId>(order));
  std::vector<std::size_t> filled(C, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const ItemId i = order[p];
    const auto c = static_cast<unsigned>(p % C);
    w.catalog.set_category(i, c);
    w.item_subcluster[i] = static_cast<std::uint32_t>(filled[c]++ % S);
  }
  for (ItemId i = 0; i < n; ++i) {
    if (C > 1 && items.uniform() < config.overlap_rate) {
      unsigned extra = static_cast<unsigned>(items.uniform_index(C - 1));
      const unsigned primary = w.catalog.categories(i).front();
      if (extra >= primary) ++extra;
      w.catalog.set_category(i, extra);
    }
    w.catalog.set_event_accessible(i, 0);
    for (std::size_t e = 1; e < E; ++e)
      if (items.uniform() < config.event_access[e]) w.catalog.set_event_accessible(i, static_cast<unsigned>(e));
  }
  for (ItemId i = 0; i < n; ++i)
    for (unsigned c : w.catalog.categories(i)) w.members[c][w.item_subcluster[i]].push_back(i);

  const std::size_t users = config.num_users, L = config.seq_len;
  w.sequences.resize(users);
  w.latent.resize(users);
  w.mix_start.resize(users);
  w.mix_end.resize(users);
  w.favourite.resize(users);
  for (std::size_t u = 0; u < users; ++u) {
    Rng rng(derive_seed(seed, u + 1));
    std::vector<unsigned> support(C);
    std::iota(support.begin(), support.end(), 0u);
    if (config.categories_per_user > 0) {
      rng.shuffle(std::span<unsigned>(support));
      support.resize(config.categories_per_user);
      std::sort(support.begin(), support.end());
    }
    w.mix_start[u] = dirichlet(rng, support, C, config.concentration);
    w.mix_end[u] = config.drift ? dirichlet(rng, support, C, config.concentration) : w.mix_start[u];
    auto& fav = w.favourite[u];
    fav.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<std::uint32_t> nonempty;
      for (std::uint32_t s = 0; s < S; ++s)
        if (!w.members[c][s].empty()) nonempty.push_back(s);
      fav[c] = nonempty[rng.uniform_index(nonempty.size())];
    }

    auto& seq = w.sequences[u];
    auto& lat = w.latent[u];
    seq.resize(L);
    lat.resize(L);
    std::int64_t t = 1'600'000'000 + static_cast<std::int64_t>(rng.uniform_index(1'000'000));
    for (std::size_t step = 0; step < L; ++step) {
      unsigned c;
      if (step > 0 && rng.uniform() < config.stickiness) {
        c = lat[step - 1];
      } else {
        const double lambda = config.drift ? static_cast<double>(step) / static_cast<double>(L - 1) : 0.0;
        std::vector<double> mix(C);
        for (std::size_t k = 0; k < C; ++k)
          mix[k] = (1.0 - lambda) * w.mix_start[u][k] + lambda * w.mix_end[u][k];
        c = static_cast<unsigned>(rng.categorical(mix));
      }
      ItemId item;
      if (rng.uniform() < config.focus) {
        const auto& sub = w.members[c][fav[c]];
        item = sub[rng.uniform_index(sub.size())];
      } else {
        std::size_t total = 0;
        for (const auto& sub : w.members[c]) total += sub.size();
        std::size_t r = rng.uniform_index(total);
        std::size_t s = 0;
        while (r >= w.members[c][s].size()) r -= w.members[c][s++].size();
        item = w.members[c][s][r];
      }
      auto event = static_cast<std::uint8_t>(rng.categorical(config.event_rates));
      if (!w.catalog.event_accessible(item, event)) event = 0;
      t += 1 + static_cast<std::int64_t>(rng.uniform_index(3600));
      seq[step] = {item, event, t};
      lat[step] = static_cast<std::uint16_t>(c);
    }
  }
  return w;
}

std::vector<std::vector<double>> planted_forecast(const PlantedWorld& world, std::size_t user,
                                                  std::size_t context_end, std::size_t horizon) {
  const std::size_t C = world.config.num_categories, n = world.config.num_items;
  const double rho = world.config.stickiness;
  std::vector<double> cat(C, 0.0);
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < horizon; ++t) {
    const auto mix = world.mixture(user, context_end + t);
    std::vector<double> next(C);
    for (std::size_t c = 0; c < C; ++c) {
      if (t == 0 && context_end == 0) next[c] = mix[c];
      else if (t == 0) next[c] = (world.latent[user][context_end - 1] == c ? rho : 0.0) + (1.0 - rho) * mix[c];
      else next[c] = rho * cat[c] + (1.0 - rho) * mix[c];
    }
    cat = std::move(next);
    std::vector<double> p(n, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      if (cat[c] == 0.0) continue;
      for (const auto& sub : world.members[c])
        for (ItemId i : sub) p[i] += cat[c] * world.item_probability(user, static_cast<unsigned>(c), i);
    }
    out.push_back(std::move(p));
  }
  return out;
}

double oracle_best_recall(const PlantedWorld& world, std::size_t user, std::size_t k,
                          std::size_t horizon) {
  const std::size_t L = world.sequences[user].size();
  if (horizon == 0 || horizon >= L) throw ConfigError("oracle horizon must be in [1, seq_len)");
  const auto forecast = planted_forecast(world, user, L - horizon, horizon);
  const std::size_t n = world.config.num_items;
  std::vector<double> score(n, 0.0);
  for (const auto& p : forecast)
    for (std::size_t i = 0; i < n; ++i) score[i] += p[i];
  std::vector<ItemId> order(n);
  std::iota(order.begin(), order.end(), ItemId{0});
  const std::size_t kk = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk), order.end(),
                    [&](ItemId a, ItemId b) { return score[a] != score[b] ? score[a] > score[b] : a < b; });
  double hit = 0.0;
  for (std::size_t r = 0; r < kk; ++r) hit += score[order[r]];
  return hit / static_cast<double>(horizon);
}

namespace detail {

Json world_config_to_json_value(const WorldConfig& c) {
  return Json{{"num_items", c.num_items},
              {"num_users", c.num_users},
              {"num_categories", c.num_categories},
              {"seq_len", c.seq_len},
              {"overlap_rate", c.overlap_rate},
              {"subclusters", c.subclusters},
              {"focus", c.focus},
              {"stickiness", c.stickiness},
              {"concentration", c.concentration},
              {"categories_per_user", c.categories_per_user},
              {"drift", c.drift},
              {"event_rates", c.event_rates},
              {"event_access", c.event_access}};
}

WorldConfig world_config_from_json_value(const Json& j) {
  check_keys(j, "world", {"num_items", "num_users", "num_categories", "seq_len", "overlap_rate",
                          "subclusters", "focus", "stickiness", "concentration",
                          "categories_per_user", "drift", "event_rates", "event_access"});
  WorldConfig c;
  c.num_items = get_or(j, "num_items", c.num_items);
  c.num_users = get_or(j, "num_users", c.num_users);
  c.num_categories = get_or(j, "num_categories", c.num_categories);
  c.seq_len = get_or(j, "seq_len", c.seq_len);
  c.overlap_rate = get_or(j, "overlap_rate", c.overlap_rate);
  c.subclusters = get_or(j, "subclusters", c.subclusters);
  c.focus = get_or(j, "focus", c.focus);
  c.stickiness = get_or(j, "stickiness", c.stickiness);
  c.concentration = get_or(j, "concentration", c.concentration);
  c.categories_per_user = get_or(j, "categories_per_user", c.categories_per_user);
  c.drift = get_or(j, "drift", c.drift);
  c.event_rates = get_or(j, "event_rates", c.event_rates);
  c.event_access = get_or(j, "event_access", c.event_access);
  if (j.contains("event_rates") && !j.contains("event_access"))
    c.event_access.assign(c.event_rates.size(), 1.0);
  return c;
}

}  // namespace detail

std::string world_config_to_json(const WorldConfig& config) {
  return detail::world_config_to_json_value(config).dump(2);
}

WorldConfig world_config_from_json(const std::string& text) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world config is not valid JSON: ") + e.what());
  }
  return detail::world_config_from_json_value(j);
}

std::string ground_truth_json(const PlantedWorld& world) {
  detail::Json j;
  j["seed"] = world.seed;
  j["world"] = detail::world_config_to_json_value(world.config);
  j["item_subcluster"] = world.item_subcluster;
  detail::Json users = detail::Json::array();
  for (std::size_t u = 0; u < world.sequences.size(); ++u)
    users.push_back({{"user", u},
                     {"mixture_start", world.mix_start[u]},
                     {"mixture_end", world.mix_end[u]},
                     {"favourite_subcluster", world.favourite[u]}});
  j["users"] = std::move(users);
  return j.dump();
}

}  // namespace phead
