// Micro-benchmarks for the hot paths: encoding, head scoring, window
// fetches and community detection.
#include <benchmark/benchmark.h>

#include <filesystem>
#include <memory>
#include <numeric>

#include "phead/datapipe.hpp"
#include "phead/model.hpp"
#include "phead/priors.hpp"
#include "phead/rng.hpp"
#include "phead/synthgen.hpp"

namespace {

using namespace phead;

EncoderConfig encoder_config(std::uint32_t vocab, std::uint32_t d) {
  EncoderConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.d_model = d;
  c.ffn_dim = 2 * d;
  c.dropout = 0.0;
  c.max_context = 50;
  c.vocab_size = vocab;
  c.num_events = 4;
  return c;
}

const PlantedWorld& world() {
  static const PlantedWorld w = [] {
    WorldConfig c;
    c.num_users = 400;
    return generate(c, 1);
  }();
  return w;
}

Model<float> make_model(std::uint32_t d, Composition comp) {
  const auto& w = world();
  PriorSpec spec{{temporal_axis(8, 2), PriorAxis{.kind = PriorKind::item, .groups = w.catalog.num_categories()}}};
  auto layout = std::make_shared<const HeadLayout>(HeadLayout::build(spec, w.catalog, comp));
  Model<float> m(encoder_config(static_cast<std::uint32_t>(w.catalog.size()), d), layout);
  m.init(3);
  return m;
}

void BM_EncodeContext(benchmark::State& state) {
  const auto model = make_model(static_cast<std::uint32_t>(state.range(0)), Composition::hierarchical);
  const auto& seq = world().sequences[0];
  const std::vector<Interaction> ctx(seq.begin(), seq.begin() + 50);
  for (auto _ : state) benchmark::DoNotOptimize(model.user_state(ctx));
}
BENCHMARK(BM_EncodeContext)->Arg(32)->Arg(64)->Arg(128);

void BM_Recommend(benchmark::State& state) {
  const auto model = make_model(64, static_cast<Composition>(state.range(0)));
  const auto& seq = world().sequences[1];
  const std::vector<Interaction> ctx(seq.begin(), seq.begin() + 50);
  for (auto _ : state) benchmark::DoNotOptimize(recommend(model, ctx, 1, 10, Fusion::max));
  state.SetLabel(std::string(to_string(static_cast<Composition>(state.range(0)))));
}
BENCHMARK(BM_Recommend)->DenseRange(0, 2);

void BM_FetchWindow(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "phead_bench_store";
  const auto layout = static_cast<StoreLayout>(state.range(0));
  write_store(dir, world().sequences, layout);
  const auto store = UserStore::open(dir);
  const auto index = build_window_index(store, 50, 8, 1);
  Rng rng(5);
  std::vector<Interaction> ctx, tgt;
  for (auto _ : state) {
    const auto& w = index.entries[rng.uniform_index(index.size())];
    store.fetch_window(w.user, w.start, 50, 8, ctx, tgt);
    benchmark::DoNotOptimize(ctx.data());
  }
  state.SetLabel(layout == StoreLayout::packed ? "packed" : "per_user");
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_FetchWindow)->Arg(static_cast<int>(StoreLayout::per_user))->Arg(static_cast<int>(StoreLayout::packed));

void BM_Louvain(benchmark::State& state) {
  const auto& w = world();
  const auto graph = build_item_graph(w.sequences, w.catalog.size(), static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(detect_communities(graph));
  state.counters["edges"] = static_cast<double>(graph.edge_count());
}
BENCHMARK(BM_Louvain)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
