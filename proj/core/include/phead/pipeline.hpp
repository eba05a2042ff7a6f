// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "phead/eval.hpp"
#include "phead/model.hpp"
#include "phead/run_config.hpp"

namespace phead {

/// File names inside a data directory.
struct DataLayout {
  std::filesystem::path root;

  std::filesystem::path catalog() const { return root / "catalog.bin"; }
  std::filesystem::path store() const { return root / "store"; }
  std::filesystem::path truth() const { return root / "ground_truth.json"; }
  std::filesystem::path world() const { return root / "world.json"; }
  std::filesystem::path item_clusters() const { return root / "priors" / "item_clusters.csv"; }
  std::filesystem::path user_clusters() const { return root / "priors" / "user_clusters.csv"; }
};

/// Generates the planted world into data_dir: store, catalog, ground truth.
void cmd_gen(const RunConfig& config, std::ostream& log);

/// Builds item and user co-engagement graphs from the training part of
/// every sequence, clusters them and records the item clusters in the
/// catalog.
void cmd_priors(const RunConfig& config, std::ostream& log);

/// The concrete prior spec for the configured axes and the data on disk.
PriorSpec resolve_priors(const RunConfig& config, const ItemCatalog& catalog);

/// Reads a clustering CSV and returns the per-node labels.
std::vector<std::uint32_t> read_cluster_labels(const std::filesystem::path& path);

struct TrainOutcome {
  TrainResult result;
  std::filesystem::path checkpoint;
};

/// Trains into run_dir: config.json, checkpoint.bin (+ .json), log.csv.
/// On divergence the last finite parameters are saved and NumericError is
/// thrown.
TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);

/// Held-out evaluation windows: for a user of length L the context is
/// records [L - tau - T, L - tau) and the targets are the first
/// `eval_horizon` of the last tau records.
struct TestSet {
  std::vector<std::uint64_t> users;
  std::vector<std::vector<Interaction>> contexts;
  std::vector<std::vector<Interaction>> targets;
  std::size_t too_short = 0;
};

TestSet build_test_set(const UserStore& store, std::uint32_t context_length,
                       std::uint32_t train_horizon, std::uint32_t eval_horizon,
                       std::size_t max_users = 0);

struct EvalOutput {
  MetricReport overall;
  std::map<std::string, MetricReport> slices;
  std::optional<GroupReport> groups;
  std::vector<UserMetrics> per_user;
  std::vector<TopK> rankings;
  FusionDiagnostics diagnostics;
};

EvalOutput evaluate_model(const Model<float>& model, const TestSet& tests, const ItemCatalog& catalog,
                          const EvalSettings& settings,
                          std::span<const std::uint32_t> user_clusters = {});

/// Evaluates a checkpoint and writes report.json, report.csv and (when
/// enabled) rankings.jsonl into run_dir.
EvalOutput cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                    std::ostream& log);

struct InferRequest {
  /// Use this user's most recent T interactions...
  std::optional<std::uint64_t> user;
  /// ...or this explicit item context (event 0).
  std::vector<ItemId> items;
  std::size_t k = 10;
  Fusion fusion = Fusion::max;
};

/// Top-K as JSON lines: rank, item, score, winning head path and its group
/// names.
std::string cmd_infer(const RunConfig& config, const std::filesystem::path& checkpoint,
                      const InferRequest& request);

/// Explanation lines for an already computed top-K.
std::string explanations_jsonl(const Model<float>& model, const TopK& topk,
                               std::optional<std::uint64_t> user);

}  // namespace phead
