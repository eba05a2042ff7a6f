// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "phead/datapipe.hpp"
#include "phead/encoder.hpp"
#include "phead/heads.hpp"
#include "phead/prior_spec.hpp"
#include "phead/synthgen.hpp"
#include "phead/training.hpp"

namespace phead {

/// One requested prior axis. Group counts of item, event, graph and user
/// axes come from the data; temporal, random and all axes need `groups`.
struct AxisRequest {
  PriorKind kind = PriorKind::all;
  std::uint32_t groups = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const AxisRequest&, const AxisRequest&) = default;
};

/// Parses "temporal:2,item" style lists.
std::vector<AxisRequest> parse_axis_list(const std::string& text);

struct GraphPriorConfig {
  std::size_t item_cap = 1000;
  std::size_t user_cap = 2000;
  double resolution = 1.0;
  std::size_t min_size = 0;
  std::uint64_t seed = 0;
  bool binarize = false;
  friend bool operator==(const GraphPriorConfig&, const GraphPriorConfig&) = default;
};

struct EvalSettings {
  std::vector<std::size_t> ks{5, 10, 20};
  std::size_t entropy_k = 10;
  Fusion fusion = Fusion::max;
  /// Targets per test user; 0 means the training horizon.
  std::uint32_t horizon = 0;
  /// Evaluate only the first N users (0 = all).
  std::size_t max_users = 0;
  /// "", "new-interest" or "user-group".
  std::string slice;
  bool dump_rankings = true;
  /// Run directory whose rankings.jsonl provides per-user baseline metrics
  /// for relative-gain columns of the user-group slice.
  std::string baseline;
  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

/// The whole pipeline configuration as one JSON document.
struct RunConfig {
  std::string data_dir = "data";
  std::string run_dir = "run";
  std::uint64_t seed = 0;
  WorldConfig world;
  StoreLayout store_layout = StoreLayout::per_user;
  EncoderConfig encoder;
  std::vector<AxisRequest> axes{{PriorKind::temporal, 2, 0}, {PriorKind::item, 0, 0}};
  Composition composition = Composition::hierarchical;
  GroupEmbeddingIndex embedding_index = GroupEmbeddingIndex::parent;
  GraphPriorConfig graph;
  std::uint32_t context_length = 50;
  std::uint32_t horizon = 8;
  std::uint32_t stride = 1;
  TrainConfig train;
  EvalSettings eval;

  /// Range and consistency checks that need no data.
  void validate() const;
};

/// Strict parse: unknown keys anywhere are rejected.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace phead
