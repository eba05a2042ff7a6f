#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "fixtures.hpp"
#include "phead/checkpoint.hpp"
#include "phead/error.hpp"
#include "small_model.hpp"

namespace phead {
namespace {

struct Saved {
  testing::TempDir dir;
  ItemCatalog cat = testing::striped_catalog(30, 3, 2);
  PriorSpec spec;
  Model<float> model;
  std::filesystem::path file;

  explicit Saved(Composition comp = Composition::hierarchical)
      : model(testing::tiny_encoder(30, 2), testing::make_layout(make_spec(), testing::striped_catalog(30, 3, 2), comp)) {
    spec = make_spec();
    Rng rng(5);
    testing::randomize_all(model, rng);
    file = dir / "checkpoint.bin";
    save_checkpoint(file, model);
  }

  static PriorSpec make_spec() {
    PriorSpec s;
    PriorAxis t{.kind = PriorKind::temporal, .groups = 2};
    t.segments = {{1, 2}, {3, 4}};
    s.axes = {t, PriorAxis{.kind = PriorKind::item, .groups = 3}};
    return s;
  }
};

TEST(Checkpoint, RoundTripIsExact) {
  for (auto comp : {Composition::hierarchical, Composition::multiplicative, Composition::additive}) {
    Saved s(comp);
    const auto back = load_checkpoint(s.file, s.cat);
    EXPECT_EQ(back.params(), s.model.params());
    EXPECT_EQ(back.config(), s.model.config());
    EXPECT_EQ(back.layout(), s.model.layout());
    EXPECT_EQ(back.heads().composition(), comp);
    const auto meta = read_checkpoint_meta(s.file);
    EXPECT_EQ(meta.spec, s.spec);
    EXPECT_EQ(meta.catalog_size, 30u);
    EXPECT_EQ(meta.param_count, s.model.params().size());
  }
}

TEST(Checkpoint, BinaryLayout) {
  Saved s;
  const auto bytes = testing::slurp(s.file);
  ASSERT_EQ(std::memcmp(bytes.data(), "PHCKPT1\0", 8), 0);
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 8, 4);
  EXPECT_EQ(count, s.model.layout().tensors().size());
  std::uint16_t len;
  std::memcpy(&len, bytes.data() + 12, 2);
  EXPECT_EQ(bytes.substr(14, len), "encoder.item_emb");
  std::uint32_t rows, cols;
  std::memcpy(&rows, bytes.data() + 14 + len, 4);
  std::memcpy(&cols, bytes.data() + 18 + len, 4);
  EXPECT_EQ(rows, 30u);
  EXPECT_EQ(cols, 8u);
  float first;
  std::memcpy(&first, bytes.data() + 22 + len, 4);
  EXPECT_EQ(first, s.model.params()[0]);
  std::size_t expected = 12;
  for (const auto& t : s.model.layout().tensors()) expected += 2 + t.name.size() + 8 + 4 * t.rows * t.cols;
  EXPECT_EQ(bytes.size(), expected);
  EXPECT_EQ(checkpoint_sidecar(s.file), s.dir / "checkpoint.json");
}

TEST(Checkpoint, RejectsMismatches) {
  Saved s;
  EXPECT_THROW(load_checkpoint(s.file, testing::striped_catalog(31, 3, 2)), DataError);

  // Sidecar claims a wider model than the tensors on disk.
  const auto side = checkpoint_sidecar(s.file);
  const std::string original = testing::slurp(side);
  auto j = nlohmann::json::parse(original);
  j["encoder"]["d_model"] = 16;
  j["encoder"]["ffn_dim"] = 32;
  { std::ofstream(side, std::ios::trunc) << j.dump(); }
  EXPECT_THROW(load_checkpoint(s.file, s.cat), DataError);
  { std::ofstream(side, std::ios::trunc) << original; }

  // Swap the stored row count of the first tensor.
  std::string bytes = testing::slurp(s.file);
  const std::string good = bytes;
  std::uint32_t rows = 29;
  std::memcpy(bytes.data() + 14 + 16, &rows, 4);
  { std::ofstream(s.file, std::ios::binary | std::ios::trunc) << bytes; }
  EXPECT_THROW(load_checkpoint(s.file, s.cat), DataError);
  { std::ofstream(s.file, std::ios::binary | std::ios::trunc) << good.substr(0, good.size() - 3); }
  EXPECT_THROW(load_checkpoint(s.file, s.cat), DataError);
  { std::ofstream(s.file, std::ios::binary | std::ios::trunc) << "NOTACKPT" + good.substr(8); }
  EXPECT_THROW(load_checkpoint(s.file, s.cat), DataError);
  std::filesystem::remove(side);
  EXPECT_THROW(read_checkpoint_meta(s.file), DataError);
}

TEST(Checkpoint, EncoderConfigJson) {
  const auto c = testing::tiny_encoder(99, 3, 16, 2, 40);
  EXPECT_EQ(encoder_config_from_json(encoder_config_to_json(c)), c);
  EXPECT_THROW(encoder_config_from_json("nope"), ConfigError);
}

}  // namespace
}  // namespace phead
