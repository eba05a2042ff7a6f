// SPDX-License-Identifier: Apache-2.0
// phead: command-line driver for data generation, priors, training,
// evaluation and inference.
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "phead/error.hpp"
#include "phead/pipeline.hpp"
#include "phead/run_config.hpp"

namespace {

struct Common {
  std::string config_path;
  std::string data_dir;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Run configuration (JSON)");
  cmd->add_option("--data", c.data_dir, "Data directory (overrides the config)");
  cmd->add_option("--run", c.run_dir, "Run directory (overrides the config)");
}

phead::RunConfig load(const Common& c) {
  phead::RunConfig cfg = c.config_path.empty() ? phead::RunConfig{} : phead::load_run_config(c.config_path);
  if (!c.data_dir.empty()) cfg.data_dir = c.data_dir;
  if (!c.run_dir.empty()) cfg.run_dir = c.run_dir;
  return cfg;
}

std::vector<phead::ItemId> parse_items(const std::string& text) {
  std::vector<phead::ItemId> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(static_cast<phead::ItemId>(std::stoul(part)));
    } catch (const std::exception&) {
      throw phead::ConfigError("bad item id '" + part + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior-conditioned adapter heads for sequential recommendation"};
  app.require_subcommand(1);

  Common gen_c, pri_c, train_c, eval_c, infer_c;

  auto* gen = app.add_subcommand("gen", "Generate a planted synthetic world");
  add_common(gen, gen_c);
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--seed", gen_seed, "Generator seed");

  auto* pri = app.add_subcommand("priors", "Build graph and user-cluster priors");
  add_common(pri, pri_c);

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, train_c);
  bool no_in_group = false, no_freq = false;
  std::optional<double> gamma, lr;
  std::optional<std::string> fusion, prior, composition, freq_mode, group_embedding;
  std::optional<std::uint32_t> steps, batch;
  std::optional<std::uint64_t> train_seed;
  tr->add_flag("--no-in-group", no_in_group, "Sample negatives from the whole catalog");
  tr->add_flag("--no-freq-balance", no_freq, "Uniform head weights");
  tr->add_option("--freq-mode", freq_mode, "printed | inverse");
  tr->add_option("--gamma", gamma, "Temporal discount in (0, 1]");
  tr->add_option("--fusion", fusion, "max | avg (stored for evaluation)");
  tr->add_option("--prior", prior, "Axes, e.g. temporal:2,item or random:8");
  tr->add_option("--composition", composition, "hierarchical | multiplicative | additive");
  tr->add_option("--group-embedding", group_embedding, "parent | current");
  tr->add_option("--steps", steps, "Optimizer steps");
  tr->add_option("--batch", batch, "Batch size");
  tr->add_option("--lr", lr, "Learning rate");
  tr->add_option("--seed", train_seed, "Training seed");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_c);
  std::string eval_ckpt;
  std::optional<std::uint32_t> eval_horizon;
  std::optional<std::string> slice, eval_fusion, baseline;
  std::optional<std::size_t> max_users;
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file (default: <run>/checkpoint.bin)");
  ev->add_option("--horizon", eval_horizon, "Targets per user (<= training horizon)");
  ev->add_option("--slice", slice, "new-interest | user-group");
  ev->add_option("--fusion", eval_fusion, "max | avg");
  ev->add_option("--baseline", baseline, "Baseline run directory for relative gains");
  ev->add_option("--max-users", max_users, "Evaluate only the first N users");

  auto* inf = app.add_subcommand("infer", "Top-K with explanations as JSON lines");
  add_common(inf, infer_c);
  std::string infer_ckpt, items;
  std::optional<std::uint64_t> user;
  std::size_t k = 10;
  std::string infer_fusion = "max";
  inf->add_option("--checkpoint", infer_ckpt, "Checkpoint file (default: <run>/checkpoint.bin)");
  inf->add_option("--user", user, "User id whose latest interactions form the context");
  inf->add_option("--items", items, "Comma-separated item context");
  inf->add_option("-k,--k", k, "Number of recommendations");
  inf->add_option("--fusion", infer_fusion, "max | avg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load(gen_c);
      if (gen_seed) cfg.seed = *gen_seed;
      phead::cmd_gen(cfg, std::cout);
    } else if (pri->parsed()) {
      phead::cmd_priors(load(pri_c), std::cout);
    } else if (tr->parsed()) {
      auto cfg = load(train_c);
      if (no_in_group) cfg.train.objective.in_group_negatives = false;
      if (no_freq) cfg.train.objective.frequency_balancing = false;
      if (freq_mode) cfg.train.objective.frequency_mode = phead::parse_frequency_mode(*freq_mode);
      if (gamma) cfg.train.objective.gamma = *gamma;
      if (fusion) cfg.eval.fusion = phead::parse_fusion(*fusion);
      if (prior) cfg.axes = phead::parse_axis_list(*prior);
      if (composition) cfg.composition = phead::parse_composition(*composition);
      if (group_embedding) cfg.embedding_index = phead::parse_group_embedding_index(*group_embedding);
      if (steps) cfg.train.steps = *steps;
      if (batch) cfg.train.batch_size = *batch;
      if (lr) cfg.train.lr = *lr;
      if (train_seed) cfg.train.seed = *train_seed;
      phead::cmd_train(cfg, std::cout);
    } else if (ev->parsed()) {
      auto cfg = load(eval_c);
      if (eval_horizon) cfg.eval.horizon = *eval_horizon;
      if (slice) cfg.eval.slice = *slice;
      if (eval_fusion) cfg.eval.fusion = phead::parse_fusion(*eval_fusion);
      if (baseline) cfg.eval.baseline = *baseline;
      if (max_users) cfg.eval.max_users = *max_users;
      const std::filesystem::path ckpt =
          eval_ckpt.empty() ? std::filesystem::path(cfg.run_dir) / "checkpoint.bin" : std::filesystem::path(eval_ckpt);
      phead::cmd_eval(cfg, ckpt, std::cout);
    } else if (inf->parsed()) {
      auto cfg = load(infer_c);
      phead::InferRequest req;
      req.user = user;
      req.items = parse_items(items);
      req.k = k;
      req.fusion = phead::parse_fusion(infer_fusion);
      if (req.k < 1) throw phead::ConfigError("-k must be >= 1");
      const std::filesystem::path ckpt =
          infer_ckpt.empty() ? std::filesystem::path(cfg.run_dir) / "checkpoint.bin" : std::filesystem::path(infer_ckpt);
      std::cout << phead::cmd_infer(cfg, ckpt, req);
    }
  } catch (const phead::Error& e) {
    std::cerr << "phead: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "phead: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "phead: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
