// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "phead/catalog.hpp"
#include "phead/encoder.hpp"
#include "phead/model.hpp"
#include "phead/prior_spec.hpp"

namespace phead {

/// Everything needed to rebuild a model's shape, stored in the JSON sidecar.
struct CheckpointMeta {
  EncoderConfig encoder;
  PriorSpec spec;
  Composition composition = Composition::hierarchical;
  GroupEmbeddingIndex embedding_index = GroupEmbeddingIndex::parent;
  std::uint64_t catalog_size = 0;
  std::uint64_t param_count = 0;
};

/// Sidecar path for a checkpoint file: same stem, ".json" extension.
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& file);

/// Binary layout: "PHCKPT1\0", u32 tensor count, then per tensor u16 name
/// length, the name, u32 rows, u32 cols and rows*cols little-endian f32.
void save_checkpoint(const std::filesystem::path& file, const Model<float>& model);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

/// Rebuilds the model against `catalog` and checks every tensor name and
/// shape against the sidecar-derived layout.
Model<float> load_checkpoint(const std::filesystem::path& file, const ItemCatalog& catalog);

std::string encoder_config_to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const std::string& text);

}  // namespace phead
