// SPDX-License-Identifier: Apache-2.0
#include "phead/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <sstream>

#include "json_util.hpp"
#include "phead/checkpoint.hpp"
#include "phead/datapipe.hpp"
#include "phead/error.hpp"
#include "phead/priors.hpp"
#include "phead/synthgen.hpp"

namespace phead {

namespace fs = std::filesystem;
using detail::Json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every user's sequence without its held-out tail.
std::vector<std::vector<Interaction>> train_sequences(const UserStore& store, std::uint32_t horizon) {
  std::vector<std::vector<Interaction>> out(store.user_count());
  for (std::size_t u = 0; u < out.size(); ++u) {
    const std::size_t len = store.length(u);
    out[u] = store.read_range(u, 0, len > horizon ? len - horizon : 0);
  }
  return out;
}

EncoderConfig encoder_for(const RunConfig& config, const ItemCatalog& catalog) {
  EncoderConfig e = config.encoder;
  e.max_context = config.context_length;
  e.vocab_size = static_cast<std::uint32_t>(catalog.size());
  e.num_events = std::max<std::uint32_t>(1, catalog.num_events());
  return e;
}

std::vector<UserMetrics> read_baseline_metrics(const fs::path& run_dir) {
  std::ifstream in(run_dir / "rankings.jsonl");
  if (!in) throw DataError("baseline run has no rankings.jsonl: " + run_dir.string());
  std::vector<UserMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      UserMetrics m;
      m.user = j.at("user").get<std::uint64_t>();
      m.valid = j.at("valid").get<bool>();
      if (m.valid) {
        m.recall = j.at("recall").get<std::vector<double>>();
        m.ndcg = j.at("ndcg").get<std::vector<double>>();
        m.entropy = j.at("entropy").get<double>();
      }
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad baseline ranking line: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace

void cmd_gen(const RunConfig& config, std::ostream& log) {
  config.validate();
  const DataLayout data{config.data_dir};
  const auto world = generate(config.world, config.seed);
  write_store(data.store(), world.sequences, config.store_layout);
  write_catalog(data.catalog(), world.catalog);
  write_text(data.truth(), ground_truth_json(world));
  write_text(data.world(), world_config_to_json(config.world));
  log << "generated " << world.sequences.size() << " users, " << world.catalog.size() << " items, "
      << world.catalog.num_categories() << " categories into " << data.root.string() << "\n";
}

void cmd_priors(const RunConfig& config, std::ostream& log) {
  config.validate();
  const DataLayout data{config.data_dir};
  auto catalog = read_catalog(data.catalog());
  const auto store = UserStore::open(data.store());
  const auto seqs = train_sequences(store, config.horizon);

  CommunityOptions opts;
  opts.resolution = config.graph.resolution;
  opts.min_size = config.graph.min_size;
  opts.seed = config.graph.seed;

  const auto item_graph = build_item_graph(seqs, catalog.size(), config.graph.item_cap, config.graph.binarize);
  const auto items = detect_communities(item_graph, opts);
  write_text(data.item_clusters(), clustering_to_csv(items));
  write_text(fs::path(data.item_clusters()).replace_extension(".json"), clustering_summary_json(items));
  apply_graph_clusters(catalog, items);
  write_catalog(data.catalog(), catalog);
  log << "item graph: " << item_graph.edge_count() << " edges, " << items.cluster_count()
      << " clusters, Q=" << items.modularity << "\n";

  const auto user_graph = build_user_graph(seqs, catalog.size(), config.graph.user_cap, config.graph.seed,
                                           config.graph.binarize);
  const auto users = detect_communities(user_graph, opts);
  write_text(data.user_clusters(), clustering_to_csv(users));
  write_text(fs::path(data.user_clusters()).replace_extension(".json"), clustering_summary_json(users));
  log << "user graph: " << user_graph.edge_count() << " edges, " << users.cluster_count()
      << " clusters, Q=" << users.modularity << "\n";
}

std::vector<std::uint32_t> read_cluster_labels(const fs::path& path) {
  return clustering_from_csv(read_text(path)).labels;
}

PriorSpec resolve_priors(const RunConfig& config, const ItemCatalog& catalog) {
  PriorSpec spec;
  for (const auto& a : config.axes) {
    PriorAxis axis;
    axis.kind = a.kind;
    switch (a.kind) {
      case PriorKind::item:
        axis.groups = catalog.num_categories();
        break;
      case PriorKind::event:
        axis.groups = catalog.num_events();
        break;
      case PriorKind::graph:
        if (!catalog.has_graph_clusters())
          throw ConfigError("graph prior needs item clusters; run 'phead priors' first");
        axis.groups = catalog.num_graph_clusters();
        break;
      case PriorKind::user: {
        const DataLayout data{config.data_dir};
        if (!fs::exists(data.user_clusters()))
          throw ConfigError("user prior needs user clusters; run 'phead priors' first");
        axis.user_groups = read_cluster_labels(data.user_clusters());
        axis.groups = axis.user_groups.empty()
                          ? 1
                          : *std::max_element(axis.user_groups.begin(), axis.user_groups.end()) + 1;
        break;
      }
      case PriorKind::temporal:
        axis = temporal_axis(config.horizon, a.groups);
        break;
      case PriorKind::random:
        axis.groups = a.groups;
        axis.seed = a.seed;
        break;
      case PriorKind::all:
        axis.groups = a.groups;
        break;
    }
    spec.axes.push_back(std::move(axis));
  }
  spec.validate(config.horizon);
  return spec;
}

TestSet build_test_set(const UserStore& store, std::uint32_t context_length,
                       std::uint32_t train_horizon, std::uint32_t eval_horizon, std::size_t max_users) {
  if (eval_horizon == 0) eval_horizon = train_horizon;
  if (eval_horizon > train_horizon) throw ConfigError("eval horizon cannot exceed the training horizon");
  TestSet out;
  const std::size_t n = max_users ? std::min(max_users, store.user_count()) : store.user_count();
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t len = store.length(u);
    if (len < std::size_t{context_length} + train_horizon) {
      ++out.too_short;
      continue;
    }
    const std::size_t start = len - train_horizon - context_length;
    std::vector<Interaction> ctx, tgt;
    store.fetch_window(u, start, context_length, eval_horizon, ctx, tgt);
    out.users.push_back(store.entry(u).id);
    out.contexts.push_back(std::move(ctx));
    out.targets.push_back(std::move(tgt));
  }
  return out;
}

EvalOutput evaluate_model(const Model<float>& model, const TestSet& tests, const ItemCatalog& catalog,
                          const EvalSettings& settings, std::span<const std::uint32_t> user_clusters) {
  EvalOutput out;
  std::size_t depth = settings.entropy_k;
  for (auto k : settings.ks) depth = std::max(depth, k);
  std::vector<UserMetrics> new_interest;
  for (std::size_t i = 0; i < tests.users.size(); ++i) {
    FusionDiagnostics diag;
    auto topk = recommend(model, tests.contexts[i], tests.users[i], depth, settings.fusion, &diag);
    out.diagnostics.unscoreable_items += diag.unscoreable_items;
    std::vector<ItemId> ranked, targets;
    for (const auto& f : topk.items) ranked.push_back(f.item);
    for (const auto& y : tests.targets[i]) targets.push_back(y.item);
    auto m = score_user(tests.users[i], ranked, targets, settings.ks, settings.entropy_k, catalog);
    if (settings.slice == "new-interest" && is_new_interest(tests.contexts[i], tests.targets[i], catalog))
      new_interest.push_back(m);
    out.per_user.push_back(std::move(m));
    out.rankings.push_back(std::move(topk));
  }
  out.overall = summarize(out.per_user, settings.ks, settings.entropy_k);
  if (settings.slice == "new-interest")
    out.slices["new-interest"] = summarize(new_interest, settings.ks, settings.entropy_k);
  if (settings.slice == "user-group") {
    std::vector<UserMetrics> baseline;
    if (!settings.baseline.empty()) baseline = read_baseline_metrics(settings.baseline);
    out.groups = per_group_report(out.per_user, user_clusters, settings.ks, settings.entropy_k, baseline,
                                  settings.baseline);
  }
  return out;
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const DataLayout data{config.data_dir};
  const fs::path run{config.run_dir};
  fs::create_directories(run);
  write_text(run / "config.json", run_config_to_json(config) + "\n");

  const auto catalog = read_catalog(data.catalog());
  const auto store = UserStore::open(data.store());
  const auto spec = resolve_priors(config, catalog);
  auto heads = std::make_shared<const HeadLayout>(
      HeadLayout::build(spec, catalog, config.composition, config.embedding_index));
  if (heads->empty_heads() > 0)
    log << heads->empty_heads() << " of " << heads->head_count()
        << " heads have an empty compatibility set and stay inert\n";
  Model<float> model(encoder_for(config, catalog), heads);
  model.init(derive_seed(config.train.seed, 0x1417));

  const auto index = build_window_index(store, config.context_length, config.horizon, config.stride,
                                        config.horizon);
  log << heads->head_count() << " heads, " << model.layout().total() << " parameters, " << index.size()
      << " training windows\n";

  std::function<double(const Model<float>&)> validate;
  TestSet val;
  if (config.train.eval_every > 0) {
    val = build_test_set(store, config.context_length, config.horizon, config.horizon, 200);
    validate = [&](const Model<float>& m) {
      EvalSettings s;
      s.ks = {10};
      s.fusion = config.eval.fusion;
      return evaluate_model(m, val, catalog, s).overall.recall_at(10);
    };
  }
  const auto on_log = [&](const TrainLogRow& row) {
    log << "step " << row.step << " loss " << row.loss << " active_heads " << row.active_heads;
    if (row.validation) log << " val_recall@10 " << *row.validation;
    log << "\n";
  };
  TrainOutcome out;
  out.result = train(model, index, store_fetcher(store, config.context_length, config.horizon),
                     config.train, validate, on_log);
  out.checkpoint = run / "checkpoint.bin";
  save_checkpoint(out.checkpoint, model);
  write_text(run / "log.csv", train_log_csv(out.result, *heads));
  if (out.result.diverged)
    throw NumericError("training diverged (" + out.result.error + "); last finite parameters saved to " +
                       out.checkpoint.string());
  return out;
}

EvalOutput cmd_eval(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  config.validate();
  const DataLayout data{config.data_dir};
  const fs::path run{config.run_dir};
  const auto catalog = read_catalog(data.catalog());
  const auto store = UserStore::open(data.store());
  const auto model = load_checkpoint(checkpoint, catalog);
  if (model.config().max_context != config.context_length)
    throw ConfigError("checkpoint context length differs from the config");
  const auto tests = build_test_set(store, config.context_length, config.horizon, config.eval.horizon,
                                    config.eval.max_users);
  std::vector<std::uint32_t> clusters;
  if (config.eval.slice == "user-group") {
    if (!fs::exists(data.user_clusters()))
      throw ConfigError("user-group slice needs user clusters; run 'phead priors' first");
    clusters = read_cluster_labels(data.user_clusters());
  }
  auto out = evaluate_model(model, tests, catalog, config.eval, clusters);

  fs::create_directories(run);
  write_text(run / "report.json",
             report_to_json(out.overall, out.slices, out.groups ? &*out.groups : nullptr) + "\n");
  std::string csv = report_to_csv(out.overall, out.slices);
  write_text(run / "report.csv", csv);
  if (out.groups) write_text(run / "report_groups.csv", group_report_to_csv(*out.groups));
  if (config.eval.dump_rankings) {
    std::ofstream r(run / "rankings.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < out.per_user.size(); ++i) {
      const auto& m = out.per_user[i];
      Json j;
      j["user"] = m.user;
      std::vector<ItemId> items;
      std::vector<std::string> heads;
      for (const auto& f : out.rankings[i].items) {
        items.push_back(f.item);
        heads.push_back(to_string(model.heads().heads()[f.head].path));
      }
      std::vector<ItemId> targets;
      for (const auto& y : tests.targets[i]) targets.push_back(y.item);
      j["items"] = items;
      j["heads"] = heads;
      j["targets"] = targets;
      j["valid"] = m.valid;
      if (m.valid) {
        j["recall"] = m.recall;
        j["ndcg"] = m.ndcg;
        j["entropy"] = m.entropy;
      }
      r << j.dump() << '\n';
    }
  }
  log << "users " << out.overall.users << " excluded " << out.overall.excluded;
  for (std::size_t i = 0; i < out.overall.ks.size(); ++i)
    log << " recall@" << out.overall.ks[i] << " " << out.overall.recall[i] << " ndcg@" << out.overall.ks[i]
        << " " << out.overall.ndcg[i];
  log << " entropy@" << out.overall.entropy_k << " " << out.overall.entropy << "\n";
  return out;
}

std::string explanations_jsonl(const Model<float>& model, const TopK& topk,
                               std::optional<std::uint64_t> user) {
  std::string out;
  for (std::size_t r = 0; r < topk.items.size(); ++r) {
    const auto& f = topk.items[r];
    Json j;
    if (user) j["user"] = *user;
    j["rank"] = r + 1;
    j["item"] = f.item;
    j["score"] = f.score;
    j["head"] = to_string(model.heads().heads()[f.head].path);
    j["groups"] = model.heads().group_names(f.head);
    if (topk.short_list && r + 1 == topk.items.size()) j["short_list"] = true;
    out += j.dump() + "\n";
  }
  return out;
}

std::string cmd_infer(const RunConfig& config, const fs::path& checkpoint, const InferRequest& request) {
  const DataLayout data{config.data_dir};
  const auto catalog = read_catalog(data.catalog());
  const auto model = load_checkpoint(checkpoint, catalog);
  const std::uint32_t T = model.config().max_context;
  std::vector<Interaction> context;
  std::uint64_t user = 0;
  if (request.user) {
    const auto store = UserStore::open(data.store());
    user = *request.user;
    std::size_t index = store.user_count();
    for (std::size_t u = 0; u < store.user_count(); ++u)
      if (store.entry(u).id == user) index = u;
    if (index == store.user_count()) throw DataError("unknown user " + std::to_string(user));
    const std::size_t len = store.length(index);
    const std::size_t n = std::min<std::size_t>(len, T);
    context = store.read_range(index, len - n, n);
  } else {
    for (const auto& a : model.heads().spec().axes)
      if (a.kind == PriorKind::user) throw ConfigError("a user prior needs --user to pick the user's heads");
    if (request.items.empty()) throw ConfigError("inference needs --user or a non-empty --items context");
    if (request.items.size() > T) throw ConfigError("context longer than the model's maximum " + std::to_string(T));
    std::int64_t t = 0;
    for (auto i : request.items) {
      if (i >= catalog.size()) throw DataError("item " + std::to_string(i) + " is not in the catalog");
      context.push_back({i, 0, t++});
    }
  }
  if (context.empty()) throw DataError("user has no interactions");
  const auto topk = recommend(model, context, user, request.k, request.fusion);
  return explanations_jsonl(model, topk, request.user);
}

}  // namespace phead
