// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phead/catalog.hpp"

namespace phead {

/// |top-K ∩ targets| / |targets| with targets deduplicated by item.
/// nullopt when there are no targets.
std::optional<double> recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets,
                                  std::size_t k);

/// Binary-gain NDCG; the ideal DCG places min(K, |targets|) hits first.
std::optional<double> ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets,
                                std::size_t k);

/// Category entropy of a top-K list, -sum_j (n_j/K) log2(n_j/K), where n_j
/// counts the listed items carrying category j. With multi-hot items the
/// n_j/K need not sum to one, so H can exceed log2(C).
double entropy_at_k(std::span<const ItemId> ranked, const ItemCatalog& catalog, std::size_t k);

/// True when some target carries a category absent from every context item.
bool is_new_interest(std::span<const Interaction> context, std::span<const Interaction> targets,
                     const ItemCatalog& catalog);

/// Indices of new-interest users among parallel history/target lists.
std::vector<std::size_t> new_interest_users(std::span<const std::vector<Interaction>> histories,
                                            std::span<const std::vector<Interaction>> targets,
                                            const ItemCatalog& catalog);

/// Metrics of one evaluated user; valid is false when the user had no targets.
struct UserMetrics {
  std::uint64_t user = 0;
  bool valid = false;
  std::vector<double> recall;  // one per K
  std::vector<double> ndcg;
  double entropy = 0.0;
};

UserMetrics score_user(std::uint64_t user, std::span<const ItemId> ranked,
                       std::span<const ItemId> targets, std::span<const std::size_t> ks,
                       std::size_t entropy_k, const ItemCatalog& catalog);

struct MetricReport {
  std::vector<std::size_t> ks;
  std::size_t entropy_k = 10;
  std::vector<double> recall;
  std::vector<double> ndcg;
  double entropy = 0.0;
  std::size_t users = 0;
  /// Users left out for having no targets.
  std::size_t excluded = 0;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Means over the valid users.
MetricReport summarize(std::span<const UserMetrics> users, std::span<const std::size_t> ks,
                       std::size_t entropy_k);

struct GroupRow {
  std::string group;
  MetricReport report;
  /// (value - baseline) / baseline per metric; empty without a baseline.
  std::vector<double> recall_gain;
  std::vector<double> ndcg_gain;
  std::optional<double> entropy_gain;
};

struct GroupReport {
  std::vector<GroupRow> rows;
  std::string baseline_name;
};

/// Aggregates per user cluster. Users whose id has no cluster land in an
/// "unknown" row. A baseline (per-user metrics of another run) adds relative
/// gain columns for the groups it shares.
GroupReport per_group_report(std::span<const UserMetrics> users,
                             std::span<const std::uint32_t> user_clusters,
                             std::span<const std::size_t> ks, std::size_t entropy_k,
                             std::span<const UserMetrics> baseline = {},
                             std::string baseline_name = {});

std::string report_to_json(const MetricReport& report, const std::map<std::string, MetricReport>& slices = {},
                           const GroupReport* groups = nullptr);
/// One header row plus one row per report: slice, users, excluded,
/// recall@K..., ndcg@K..., entropy@K.
std::string report_to_csv(const MetricReport& report, const std::map<std::string, MetricReport>& slices = {});
std::string group_report_to_csv(const GroupReport& report);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};
/// Sample standard deviation (n - 1); zero for fewer than two values.
MeanStd mean_std(std::span<const double> values);

}  // namespace phead
