// SPDX-License-Identifier: Apache-2.0
#include "phead/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <memory>

#include "json_util.hpp"
#include "phead/byte_io.hpp"
#include "phead/error.hpp"

namespace phead {

namespace {
constexpr char kMagic[8] = {'P', 'H', 'C', 'K', 'P', 'T', '1', '\0'};
}

namespace detail {

Json encoder_config_to_json_value(const EncoderConfig& c) {
  return Json{{"num_layers", c.num_layers}, {"num_heads", c.num_heads},
              {"d_model", c.d_model},       {"ffn_dim", c.ffn_dim},
              {"dropout", c.dropout},       {"max_context", c.max_context},
              {"vocab_size", c.vocab_size}, {"num_events", c.num_events}};
}

EncoderConfig encoder_config_from_json_value(const Json& j) {
  check_keys(j, "encoder", {"num_layers", "num_heads", "d_model", "ffn_dim", "dropout",
                            "max_context", "vocab_size", "num_events"});
  EncoderConfig c;
  c.num_layers = get_or(j, "num_layers", c.num_layers);
  c.num_heads = get_or(j, "num_heads", c.num_heads);
  c.d_model = get_or(j, "d_model", c.d_model);
  c.ffn_dim = get_or(j, "ffn_dim", c.ffn_dim);
  c.dropout = get_or(j, "dropout", c.dropout);
  c.max_context = get_or(j, "max_context", c.max_context);
  c.vocab_size = get_or(j, "vocab_size", c.vocab_size);
  c.num_events = get_or(j, "num_events", c.num_events);
  return c;
}

}  // namespace detail

std::string encoder_config_to_json(const EncoderConfig& config) {
  return detail::encoder_config_to_json_value(config).dump(2);
}

EncoderConfig encoder_config_from_json(const std::string& text) {
  try {
    return detail::encoder_config_from_json_value(detail::Json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder config is not valid JSON: ") + e.what());
  }
}

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& file) {
  auto p = file;
  p.replace_extension(".json");
  return p;
}

void save_checkpoint(const std::filesystem::path& file, const Model<float>& model) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + file.string());
    out.write(kMagic, 8);
    const auto& layout = model.layout();
    io::put(out, static_cast<std::uint32_t>(layout.count()));
    for (const auto& t : layout.tensors()) {
      io::put(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      io::put(out, static_cast<std::uint32_t>(t.rows));
      io::put(out, static_cast<std::uint32_t>(t.cols));
      out.write(reinterpret_cast<const char*>(model.params().data() + t.offset),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed: " + file.string());
  }
  detail::Json j;
  j["format"] = "PHCKPT1";
  j["encoder"] = detail::encoder_config_to_json_value(model.config());
  j["priors"] = detail::prior_spec_to_json_value(model.heads().spec());
  j["composition"] = std::string(to_string(model.heads().composition()));
  j["group_embedding"] = std::string(to_string(model.heads().embedding_index()));
  j["catalog_size"] = model.heads().catalog_size();
  j["param_count"] = model.layout().total();
  std::ofstream side(checkpoint_sidecar(file), std::ios::trunc);
  side << j.dump(2) << '\n';
  if (!side) throw DataError("cannot write checkpoint sidecar for " + file.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file) {
  const auto path = checkpoint_sidecar(file);
  std::ifstream in(path);
  if (!in) throw DataError("missing checkpoint sidecar " + path.string());
  CheckpointMeta meta;
  try {
    detail::Json j;
    in >> j;
    detail::check_keys(j, "checkpoint sidecar", {"format", "encoder", "priors", "composition",
                                                 "group_embedding", "catalog_size", "param_count"});
    if (j.at("format") != "PHCKPT1") throw DataError(path.string() + ": unknown checkpoint format");
    meta.encoder = detail::encoder_config_from_json_value(j.at("encoder"));
    meta.spec = detail::prior_spec_from_json_value(j.at("priors"));
    meta.composition = parse_composition(j.at("composition").get<std::string>());
    meta.embedding_index = parse_group_embedding_index(j.at("group_embedding").get<std::string>());
    meta.catalog_size = j.at("catalog_size").get<std::uint64_t>();
    meta.param_count = j.at("param_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return meta;
}

Model<float> load_checkpoint(const std::filesystem::path& file, const ItemCatalog& catalog) {
  const auto meta = read_checkpoint_meta(file);
  if (meta.catalog_size != catalog.size())
    throw DataError(file.string() + ": trained on " + std::to_string(meta.catalog_size) +
                    " items but the catalog has " + std::to_string(catalog.size()));
  auto heads = std::make_shared<const HeadLayout>(
      HeadLayout::build(meta.spec, catalog, meta.composition, meta.embedding_index));
  Model<float> model(meta.encoder, heads);
  const auto& layout = model.layout();
  if (layout.total() != meta.param_count)
    throw DataError(file.string() + ": parameter count disagrees with sidecar");

  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError(file.string() + ": bad magic");
  std::uint32_t count = 0;
  if (!io::get(in, count) || count != layout.count())
    throw DataError(file.string() + ": tensor count disagrees with the model layout");
  for (const auto& t : layout.tensors()) {
    std::uint16_t len = 0;
    std::uint32_t rows = 0, cols = 0;
    if (!io::get(in, len)) throw DataError(file.string() + ": truncated");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!io::get(in, rows) || !io::get(in, cols)) throw DataError(file.string() + ": truncated");
    if (name != t.name || rows != t.rows || cols != t.cols)
      throw DataError(file.string() + ": tensor '" + name + "' does not match expected '" + t.name + "'");
    if (!in.read(reinterpret_cast<char*>(model.params().data() + t.offset),
                 static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw DataError(file.string() + ": truncated tensor '" + name + "'");
  }
  return model;
}

}  // namespace phead
