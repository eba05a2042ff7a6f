// SPDX-License-Identifier: Apache-2.0
#include "phead/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "phead/error.hpp"

namespace phead {

using detail::check_keys;
using detail::get_or;
using detail::Json;

std::vector<AxisRequest> parse_axis_list(const std::string& text) {
  std::vector<AxisRequest> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    AxisRequest a;
    const auto colon = part.find(':');
    a.kind = parse_prior_kind(part.substr(0, colon));
    if (colon != std::string::npos) {
      try {
        a.groups = static_cast<std::uint32_t>(std::stoul(part.substr(colon + 1)));
      } catch (const std::exception&) {
        throw ConfigError("bad group count in prior '" + part + "'");
      }
    }
    out.push_back(a);
  }
  if (out.empty()) throw ConfigError("prior list is empty");
  return out;
}

void RunConfig::validate() const {
  world.validate();
  train.validate();
  if (context_length < 1) throw ConfigError("context_length must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (axes.empty()) throw ConfigError("at least one prior axis is required");
  for (const auto& a : axes) {
    const bool needs_groups =
        a.kind == PriorKind::temporal || a.kind == PriorKind::random || a.kind == PriorKind::all;
    if (needs_groups && a.groups < 1)
      throw ConfigError(std::string(to_string(a.kind)) + " axis needs a group count >= 1");
    if (a.kind == PriorKind::temporal && a.groups > horizon)
      throw ConfigError("temporal axis has more segments than horizon steps");
  }
  if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (auto k : eval.ks)
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  if (eval.entropy_k < 1) throw ConfigError("eval.entropy_k must be >= 1");
  if (eval.horizon > horizon) throw ConfigError("eval horizon cannot exceed the training horizon");
  if (!eval.slice.empty() && eval.slice != "new-interest" && eval.slice != "user-group")
    throw ConfigError("eval.slice must be 'new-interest' or 'user-group'");
  if (encoder.d_model < 1 || encoder.num_heads < 1 || encoder.d_model % encoder.num_heads != 0)
    throw ConfigError("d_model must be a positive multiple of num_heads");
  if (!(encoder.dropout >= 0.0 && encoder.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

namespace {

Json axes_to_json(const std::vector<AxisRequest>& axes) {
  Json out = Json::array();
  for (const auto& a : axes) {
    Json j{{"kind", std::string(to_string(a.kind))}};
    if (a.groups) j["groups"] = a.groups;
    if (a.kind == PriorKind::random) j["seed"] = a.seed;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  Json j;
  j["data_dir"] = c.data_dir;
  j["run_dir"] = c.run_dir;
  j["seed"] = c.seed;
  j["world"] = detail::world_config_to_json_value(c.world);
  j["store_layout"] = c.store_layout == StoreLayout::packed ? "packed" : "per_user";
  j["encoder"] = Json{{"num_layers", c.encoder.num_layers},
                      {"num_heads", c.encoder.num_heads},
                      {"d_model", c.encoder.d_model},
                      {"ffn_dim", c.encoder.ffn_dim},
                      {"dropout", c.encoder.dropout}};
  j["priors"] = Json{{"axes", axes_to_json(c.axes)},
                     {"composition", std::string(to_string(c.composition))},
                     {"group_embedding", std::string(to_string(c.embedding_index))}};
  j["graph"] = Json{{"item_cap", c.graph.item_cap},     {"user_cap", c.graph.user_cap},
                    {"resolution", c.graph.resolution}, {"min_size", c.graph.min_size},
                    {"seed", c.graph.seed},             {"binarize", c.graph.binarize}};
  j["window"] = Json{{"context_length", c.context_length}, {"horizon", c.horizon}, {"stride", c.stride}};
  const auto& t = c.train;
  j["train"] = Json{{"steps", t.steps},
                    {"batch_size", t.batch_size},
                    {"lr", t.lr},
                    {"beta1", t.beta1},
                    {"beta2", t.beta2},
                    {"warmup_steps", t.warmup_steps},
                    {"gamma", t.objective.gamma},
                    {"negatives", t.objective.negatives},
                    {"in_group_negatives", t.objective.in_group_negatives},
                    {"frequency_balancing", t.objective.frequency_balancing},
                    {"frequency_mode", std::string(to_string(t.objective.frequency_mode))},
                    {"sampling", std::string(to_string(t.sampling.mode))},
                    {"recency_exponent", t.sampling.recency_exponent},
                    {"log_every", t.log_every},
                    {"eval_every", t.eval_every},
                    {"seed", t.seed}};
  j["eval"] = Json{{"ks", c.eval.ks},
                   {"entropy_k", c.eval.entropy_k},
                   {"fusion", std::string(to_string(c.eval.fusion))},
                   {"horizon", c.eval.horizon},
                   {"max_users", c.eval.max_users},
                   {"slice", c.eval.slice},
                   {"dump_rankings", c.eval.dump_rankings},
                   {"baseline", c.eval.baseline}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  check_keys(j, "config", {"data_dir", "run_dir", "seed", "world", "store_layout", "encoder", "priors",
                           "graph", "window", "train", "eval"});
  c.data_dir = get_or(j, "data_dir", c.data_dir);
  c.run_dir = get_or(j, "run_dir", c.run_dir);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("world")) c.world = detail::world_config_from_json_value(j["world"]);
  const auto layout = get_or<std::string>(j, "store_layout", "per_user");
  if (layout == "packed") c.store_layout = StoreLayout::packed;
  else if (layout == "per_user") c.store_layout = StoreLayout::per_user;
  else throw ConfigError("store_layout must be 'per_user' or 'packed'");

  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    check_keys(e, "encoder", {"num_layers", "num_heads", "d_model", "ffn_dim", "dropout"});
    c.encoder.num_layers = get_or(e, "num_layers", c.encoder.num_layers);
    c.encoder.num_heads = get_or(e, "num_heads", c.encoder.num_heads);
    c.encoder.d_model = get_or(e, "d_model", c.encoder.d_model);
    c.encoder.ffn_dim = get_or(e, "ffn_dim", c.encoder.ffn_dim);
    c.encoder.dropout = get_or(e, "dropout", c.encoder.dropout);
  }
  if (j.contains("priors")) {
    const auto& p = j["priors"];
    check_keys(p, "priors", {"axes", "composition", "group_embedding"});
    if (p.contains("axes")) {
      if (!p["axes"].is_array()) throw ConfigError("priors.axes must be an array");
      c.axes.clear();
      for (const auto& a : p["axes"]) {
        check_keys(a, "prior axis", {"kind", "groups", "seed"});
        AxisRequest r;
        r.kind = parse_prior_kind(get_or<std::string>(a, "kind", ""));
        r.groups = get_or(a, "groups", r.groups);
        r.seed = get_or(a, "seed", r.seed);
        c.axes.push_back(r);
      }
    }
    c.composition = parse_composition(get_or<std::string>(p, "composition", "hierarchical"));
    c.embedding_index = parse_group_embedding_index(get_or<std::string>(p, "group_embedding", "parent"));
  }
  if (j.contains("graph")) {
    const auto& g = j["graph"];
    check_keys(g, "graph", {"item_cap", "user_cap", "resolution", "min_size", "seed", "binarize"});
    c.graph.item_cap = get_or(g, "item_cap", c.graph.item_cap);
    c.graph.user_cap = get_or(g, "user_cap", c.graph.user_cap);
    c.graph.resolution = get_or(g, "resolution", c.graph.resolution);
    c.graph.min_size = get_or(g, "min_size", c.graph.min_size);
    c.graph.seed = get_or(g, "seed", c.graph.seed);
    c.graph.binarize = get_or(g, "binarize", c.graph.binarize);
  }
  if (j.contains("window")) {
    const auto& w = j["window"];
    check_keys(w, "window", {"context_length", "horizon", "stride"});
    c.context_length = get_or(w, "context_length", c.context_length);
    c.horizon = get_or(w, "horizon", c.horizon);
    c.stride = get_or(w, "stride", c.stride);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"steps", "batch_size", "lr", "beta1", "beta2", "warmup_steps", "gamma",
                            "negatives", "in_group_negatives", "frequency_balancing",
                            "frequency_mode", "sampling", "recency_exponent", "log_every",
                            "eval_every", "seed"});
    auto& tc = c.train;
    tc.steps = get_or(t, "steps", tc.steps);
    tc.batch_size = get_or(t, "batch_size", tc.batch_size);
    tc.lr = get_or(t, "lr", tc.lr);
    tc.beta1 = get_or(t, "beta1", tc.beta1);
    tc.beta2 = get_or(t, "beta2", tc.beta2);
    tc.warmup_steps = get_or(t, "warmup_steps", tc.warmup_steps);
    tc.objective.gamma = get_or(t, "gamma", tc.objective.gamma);
    tc.objective.negatives = get_or(t, "negatives", tc.objective.negatives);
    tc.objective.in_group_negatives = get_or(t, "in_group_negatives", tc.objective.in_group_negatives);
    tc.objective.frequency_balancing = get_or(t, "frequency_balancing", tc.objective.frequency_balancing);
    tc.objective.frequency_mode = parse_frequency_mode(get_or<std::string>(t, "frequency_mode", "printed"));
    tc.sampling.mode = parse_sampling_mode(get_or<std::string>(t, "sampling", "uniform_window"));
    tc.sampling.recency_exponent = get_or(t, "recency_exponent", tc.sampling.recency_exponent);
    tc.log_every = get_or(t, "log_every", tc.log_every);
    tc.eval_every = get_or(t, "eval_every", tc.eval_every);
    tc.seed = get_or(t, "seed", tc.seed);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, "eval", {"ks", "entropy_k", "fusion", "horizon", "max_users", "slice", "dump_rankings",
                          "baseline"});
    c.eval.ks = get_or(e, "ks", c.eval.ks);
    c.eval.entropy_k = get_or(e, "entropy_k", c.eval.entropy_k);
    c.eval.fusion = parse_fusion(get_or<std::string>(e, "fusion", "max"));
    c.eval.horizon = get_or(e, "horizon", c.eval.horizon);
    c.eval.max_users = get_or(e, "max_users", c.eval.max_users);
    c.eval.slice = get_or(e, "slice", c.eval.slice);
    c.eval.dump_rankings = get_or(e, "dump_rankings", c.eval.dump_rankings);
    c.eval.baseline = get_or(e, "baseline", c.eval.baseline);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

}  // namespace phead
