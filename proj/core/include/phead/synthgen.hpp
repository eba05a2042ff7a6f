// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "phead/catalog.hpp"

namespace phead {

/// Parameters of the planted multi-intent world.
///
/// Each user holds a category mixture that drifts linearly from a start to
/// an end mixture over the sequence. At every step the previous category is
/// kept with probability `stickiness`, otherwise a fresh one is drawn from
/// the current mixture. Within a category a user prefers one of the
/// category's subclusters: with probability `focus` the item comes from it,
/// otherwise uniformly from the whole category (focus 0 gives plain uniform
/// choice).
struct WorldConfig {
  std::uint32_t num_items = 500;
  std::uint32_t num_users = 2000;
  std::uint16_t num_categories = 8;
  std::uint32_t seq_len = 120;
  /// Probability that an item carries one extra category.
  double overlap_rate = 0.15;
  std::uint32_t subclusters = 4;
  double focus = 0.8;
  double stickiness = 0.6;
  /// Dirichlet concentration of user mixtures; small values give few
  /// dominant categories.
  double concentration = 0.3;
  /// Restricts each user to this many categories (0 = all).
  std::uint32_t categories_per_user = 0;
  bool drift = true;
  /// Per-event rates, event 0 first. Event 0 must be accessible everywhere.
  std::vector<double> event_rates{0.85, 0.10, 0.045, 0.005};
  /// Share of items on which each event type can happen (event 0 ignored).
  std::vector<double> event_access{1.0, 1.0, 0.9, 0.7};

  std::uint16_t num_events() const noexcept { return static_cast<std::uint16_t>(event_rates.size()); }
  void validate() const;
  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

struct PlantedWorld {
  WorldConfig config;
  std::uint64_t seed = 0;
  ItemCatalog catalog;
  /// Subcluster of every item (shared by all its categories).
  std::vector<std::uint32_t> item_subcluster;
  /// category -> subcluster -> items
  std::vector<std::vector<std::vector<ItemId>>> members;
  std::vector<std::vector<Interaction>> sequences;
  /// Latent category that generated each interaction.
  std::vector<std::vector<std::uint16_t>> latent;
  std::vector<std::vector<double>> mix_start;
  std::vector<std::vector<double>> mix_end;
  /// Favourite subcluster per (user, category).
  std::vector<std::vector<std::uint32_t>> favourite;

  /// Mixture in effect at step n of a user's sequence.
  std::vector<double> mixture(std::size_t user, std::size_t step) const;
  /// Planted probability of drawing `item` given the category at a step.
  double item_probability(std::size_t user, unsigned category, ItemId item) const;
  /// Items of a category (any subcluster).
  std::vector<ItemId> category_items(unsigned category) const;
};

/// Deterministic under `seed`; users are generated from independent streams.
PlantedWorld generate(const WorldConfig& config, std::uint64_t seed);

/// Per-step item distributions of the planted process for the `horizon`
/// steps after the first `context_end` interactions of a user.
std::vector<std::vector<double>> planted_forecast(const PlantedWorld& world, std::size_t user,
                                                  std::size_t context_end, std::size_t horizon);

/// Expected Recall@K of the ranking by planted target probability, with
/// targets counted per horizon slot. The context is the first
/// seq_len - horizon interactions.
double oracle_best_recall(const PlantedWorld& world, std::size_t user, std::size_t k,
                          std::size_t horizon);

/// Mixtures, drift, favourites and item subclusters as JSON.
std::string ground_truth_json(const PlantedWorld& world);
std::string world_config_to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const std::string& text);

}  // namespace phead
