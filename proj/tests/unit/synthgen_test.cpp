#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "phead/error.hpp"
#include "phead/heads.hpp"
#include "phead/training.hpp"
#include "phead/rng.hpp"
#include "phead/synthgen.hpp"

namespace phead {
namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.num_items = 120;
  c.num_users = 40;
  c.num_categories = 6;
  c.seq_len = 60;
  return c;
}

TEST(World, Deterministic) {
  const auto a = generate(small_world(), 5);
  const auto b = generate(small_world(), 5);
  const auto c = generate(small_world(), 6);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_EQ(a.catalog, b.catalog);
  EXPECT_EQ(ground_truth_json(a), ground_truth_json(b));
  EXPECT_NE(a.sequences, c.sequences);
}

TEST(World, CatalogAndSequencesAreConsistent) {
  const auto w = generate(small_world(), 1);
  for (ItemId i = 0; i < w.catalog.size(); ++i) {
    EXPECT_GE(w.catalog.category_count(i), 1u);
    EXPECT_LE(w.catalog.category_count(i), 2u);
    EXPECT_TRUE(w.catalog.event_accessible(i, 0));
  }
  for (std::size_t u = 0; u < w.sequences.size(); ++u) {
    ASSERT_EQ(w.sequences[u].size(), 60u);
    for (std::size_t s = 0; s < w.sequences[u].size(); ++s) {
      const auto& x = w.sequences[u][s];
      EXPECT_TRUE(w.catalog.has_category(x.item, w.latent[u][s]));
      EXPECT_TRUE(w.catalog.event_accessible(x.item, x.event));
      if (s) {
        EXPECT_GT(x.time, w.sequences[u][s - 1].time);
      }
    }
    EXPECT_NEAR(std::accumulate(w.mix_start[u].begin(), w.mix_start[u].end(), 0.0), 1.0, 1e-12);
  }
}

TEST(World, SingleCategoryAndNoDrift) {
  auto cfg = small_world();
  cfg.num_categories = 1;
  cfg.drift = false;
  const auto w = generate(cfg, 2);
  for (ItemId i = 0; i < w.catalog.size(); ++i) EXPECT_EQ(w.catalog.categories(i), std::vector<unsigned>{0});
  for (std::size_t u = 0; u < w.sequences.size(); ++u) {
    EXPECT_EQ(w.mix_start[u], w.mix_end[u]);
    EXPECT_EQ(w.mixture(u, 0), w.mixture(u, 59));
    EXPECT_DOUBLE_EQ(w.mixture(u, 30)[0], 1.0);
  }
}

TEST(World, OneCategoryPerUserWithoutDrift) {
  auto cfg = small_world();
  cfg.categories_per_user = 1;
  cfg.drift = false;
  const auto w = generate(cfg, 21);
  for (std::size_t u = 0; u < w.sequences.size(); ++u) {
    const auto top = std::max_element(w.mix_start[u].begin(), w.mix_start[u].end());
    ASSERT_DOUBLE_EQ(*top, 1.0);
    const auto c = static_cast<unsigned>(top - w.mix_start[u].begin());
    for (std::size_t s = 0; s < w.sequences[u].size(); ++s) {
      ASSERT_EQ(w.latent[u][s], c);
      ASSERT_TRUE(w.catalog.has_category(w.sequences[u][s].item, c));
    }
  }
}

TEST(World, ZeroRateEventNeverAppears) {
  auto cfg = small_world();
  cfg.event_rates = {0.7, 0.0, 0.3};
  cfg.event_access = {1.0, 1.0, 1.0};
  const auto w = generate(cfg, 3);
  std::vector<std::size_t> count(3, 0);
  for (const auto& seq : w.sequences)
    for (const auto& x : seq) ++count[x.event];
  EXPECT_EQ(count[1], 0u);
  EXPECT_GT(count[2], 0u);
}

TEST(World, CategoryFrequenciesFollowTheMixture) {
  auto cfg = small_world();
  cfg.num_users = 4;
  cfg.seq_len = 10000;
  cfg.drift = false;
  cfg.concentration = 2.0;
  for (double stick : {0.0, 0.6}) {
    cfg.stickiness = stick;
    const auto w = generate(cfg, 9);
    for (std::size_t u = 0; u < w.sequences.size(); ++u) {
      std::vector<double> freq(cfg.num_categories, 0.0);
      for (auto c : w.latent[u]) freq[c] += 1.0 / cfg.seq_len;
      for (std::size_t c = 0; c < freq.size(); ++c)
        EXPECT_NEAR(freq[c], w.mix_start[u][c], 0.03) << "user " << u << " category " << c;
    }
  }
}

TEST(World, ItemFrequenciesWithinACategory) {
  auto cfg = small_world();
  cfg.num_users = 1;
  cfg.seq_len = 60000;
  cfg.drift = false;
  const auto w = generate(cfg, 4);
  std::vector<std::vector<double>> seen(cfg.num_categories, std::vector<double>(cfg.num_items, 0.0));
  std::vector<double> per_cat(cfg.num_categories, 0.0);
  for (std::size_t s = 0; s < w.sequences[0].size(); ++s) {
    seen[w.latent[0][s]][w.sequences[0][s].item] += 1;
    per_cat[w.latent[0][s]] += 1;
  }
  for (unsigned c = 0; c < cfg.num_categories; ++c) {
    if (per_cat[c] < 5000) continue;
    double total = 0;
    for (ItemId i = 0; i < cfg.num_items; ++i) {
      const double p = w.item_probability(0, c, i);
      total += p;
      EXPECT_NEAR(seen[c][i] / per_cat[c], p, 0.03);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Oracle, ClosedFormCases) {
  WorldConfig cfg;
  cfg.num_items = 50;
  cfg.num_users = 3;
  cfg.num_categories = 1;
  cfg.seq_len = 30;
  cfg.overlap_rate = 0;
  cfg.focus = 0.0;
  const auto flat = generate(cfg, 1);
  EXPECT_NEAR(oracle_best_recall(flat, 0, 10, 5), 0.2, 1e-12);
  cfg.focus = 1.0;
  cfg.subclusters = 5;  // ten items per subcluster
  const auto focused = generate(cfg, 1);
  EXPECT_NEAR(oracle_best_recall(focused, 0, 10, 5), 1.0, 1e-12);
  EXPECT_NEAR(oracle_best_recall(focused, 0, 5, 5), 0.5, 1e-12);
  EXPECT_THROW(oracle_best_recall(focused, 0, 5, 30), ConfigError);
}

// Forward simulation of the planted process, independent of planted_forecast.
TEST(Oracle, MatchesMonteCarlo) {
  auto cfg = small_world();
  const auto w = generate(cfg, 8);
  const std::size_t H = 4, K = 10, L = cfg.seq_len;
  Rng rng(77);
  for (std::size_t u : {0u, 7u}) {
    std::vector<double> expect(cfg.num_items, 0.0);
    const int sims = 200000;
    for (int s = 0; s < sims; ++s) {
      unsigned c = w.latent[u][L - H - 1];
      for (std::size_t t = 0; t < H; ++t) {
        const std::size_t step = L - H + t;
        if (!(rng.uniform() < cfg.stickiness)) {
          const double lambda = static_cast<double>(step) / static_cast<double>(L - 1);
          std::vector<double> mix(cfg.num_categories);
          for (std::size_t k = 0; k < mix.size(); ++k)
            mix[k] = (1 - lambda) * w.mix_start[u][k] + lambda * w.mix_end[u][k];
          c = static_cast<unsigned>(rng.categorical(mix));
        }
        const auto items = w.category_items(c);
        ItemId item;
        if (rng.uniform() < cfg.focus) {
          const auto& sub = w.members[c][w.favourite[u][c]];
          item = sub[rng.uniform_index(sub.size())];
        } else {
          item = items[rng.uniform_index(items.size())];
        }
        expect[item] += 1.0 / sims;
      }
    }
    std::vector<double> sorted = expect;
    std::sort(sorted.rbegin(), sorted.rend());
    const double mc = std::accumulate(sorted.begin(), sorted.begin() + K, 0.0) / H;
    EXPECT_NEAR(oracle_best_recall(w, u, K, H), mc, 0.01) << "user " << u;
  }
}

// Exact expectation by enumerating every latent category path of the horizon.
TEST(Oracle, TwoCategoryUserMatchesEnumeration) {
  auto cfg = small_world();
  cfg.num_categories = 5;
  cfg.categories_per_user = 2;
  const auto w = generate(cfg, 12);
  const std::size_t H = 5, L = cfg.seq_len;
  for (std::size_t u = 0; u < 6; ++u) {
    std::vector<unsigned> cats;
    for (unsigned c = 0; c < cfg.num_categories; ++c)
      if (w.mix_start[u][c] > 0 || w.mix_end[u][c] > 0) cats.push_back(c);
    ASSERT_LE(cats.size(), 2u);
    std::vector<double> expect(cfg.num_items, 0.0);
    std::vector<std::size_t> path(H, 0);
    const std::size_t paths = static_cast<std::size_t>(std::pow(cats.size(), H));
    for (std::size_t code = 0; code < paths; ++code) {
      std::size_t rest = code;
      for (auto& p : path) {
        p = rest % cats.size();
        rest /= cats.size();
      }
      double prob = 1.0;
      unsigned prev = w.latent[u][L - H - 1];
      for (std::size_t t = 0; t < H; ++t) {
        const unsigned c = cats[path[t]];
        const double lambda = static_cast<double>(L - H + t) / static_cast<double>(L - 1);
        const double mix = (1 - lambda) * w.mix_start[u][c] + lambda * w.mix_end[u][c];
        prob *= (c == prev ? cfg.stickiness : 0.0) + (1 - cfg.stickiness) * mix;
        prev = c;
      }
      for (std::size_t t = 0; t < H; ++t)
        for (ItemId i = 0; i < cfg.num_items; ++i) expect[i] += prob * w.item_probability(u, cats[path[t]], i);
    }
    std::sort(expect.rbegin(), expect.rend());
    for (std::size_t k : {1, 10, 25})
      EXPECT_NEAR(oracle_best_recall(w, u, k, H), std::accumulate(expect.begin(), expect.begin() + static_cast<long>(k), 0.0) / H, 1e-12);
  }
}

TEST(World, ItemPriorPositivesRecoverPlantedCategories) {
  const auto w = generate(small_world(), 13);
  const HeadLayout layout = HeadLayout::build(
      PriorSpec{{PriorAxis{.kind = PriorKind::item, .groups = w.catalog.num_categories()}}}, w.catalog,
      Composition::hierarchical);
  for (std::size_t u = 0; u < w.sequences.size(); ++u)
    for (std::size_t s = 0; s < w.sequences[u].size(); ++s) {
      const std::vector<Interaction> one{w.sequences[u][s]};
      const auto pos = assign_positives(one, layout, u);
      bool found = false;
      for (std::size_t k = 0; k < layout.head_count(); ++k)
        if (!pos.per_head[k].empty() && layout.heads()[k].path.groups[0] == w.latent[u][s]) found = true;
      ASSERT_TRUE(found) << "user " << u << " step " << s;
    }
}

TEST(WorldConfigJson, RoundTripAndValidation) {
  auto cfg = small_world();
  cfg.categories_per_user = 3;
  cfg.event_rates = {0.9, 0.1};
  cfg.event_access = {1.0, 0.5};
  EXPECT_EQ(world_config_from_json(world_config_to_json(cfg)), cfg);
  EXPECT_THROW(world_config_from_json("{\"num_itemz\": 3}"), ConfigError);
  EXPECT_THROW(world_config_from_json("{"), ConfigError);
  auto bad = cfg;
  bad.event_rates = {0.5, 0.4};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.num_items = 2;
  EXPECT_THROW(generate(bad, 1), ConfigError);
  const auto gt = nlohmann::json::parse(ground_truth_json(generate(cfg, 2)));
  EXPECT_EQ(gt["users"].size(), cfg.num_users);
  EXPECT_EQ(gt["item_subcluster"].size(), cfg.num_items);
}

}  // namespace
}  // namespace phead
