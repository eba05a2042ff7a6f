// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phead/datapipe.hpp"
#include "phead/heads.hpp"
#include "phead/model.hpp"
#include "phead/rng.hpp"

namespace phead {

/// A target y_{T+t}; step is 1-based.
struct Positive {
  std::uint32_t step = 1;
  ItemId item = 0;
  friend bool operator==(const Positive&, const Positive&) = default;
};

struct HeadPositives {
  std::vector<std::vector<Positive>> per_head;
  /// Heads without positives in this sample; they take no part in the loss.
  std::vector<bool> inert;

  std::size_t total() const noexcept;
  std::size_t active() const noexcept;
};

/// Target t is positive for head k when the item lies in the head's
/// compatibility set and every temporal, event and user constraint of the
/// head holds (segment contains t, event matches, user is in the group).
HeadPositives assign_positives(std::span<const Interaction> horizon, const HeadLayout& layout,
                               std::uint64_t user = 0);

struct NegativeSample {
  std::vector<ItemId> items;
  /// Fewer than the requested number were available.
  bool short_sample = false;
};

/// Uniform draw without replacement from omega minus the positive, sorted.
NegativeSample sample_in_group_negatives(ItemId positive, const CompatibilitySet& omega,
                                         std::size_t n_neg, Rng& rng);
/// Same, from the whole catalog (the ablation without in-group sampling).
NegativeSample sample_catalog_negatives(ItemId positive, std::size_t catalog_size,
                                        std::size_t n_neg, Rng& rng);

/// Softmax cross-entropy of the positive against {positive} ∪ negatives
/// under the query, with max subtraction.
template <class S>
S head_loss(const Vec<S>& query, ItemId positive, std::span<const ItemId> negatives,
            const ConstMatMap<S>& table);

/// Adds coef * dL/dq to dq and coef * dL/de_j to the table gradient, and
/// returns the unscaled loss.
template <class S>
S head_loss_backward(const Vec<S>& query, ItemId positive, std::span<const ItemId> negatives,
                     const ConstMatMap<S>& table, S coef, Vec<S>& dq, MatMap<S> d_table);

enum class FrequencyMode { printed, inverse };
std::string_view to_string(FrequencyMode mode) noexcept;
FrequencyMode parse_frequency_mode(std::string_view name);

/// w_k from the positive counts of a batch. With balancing: printed mode
/// gives c_k / sum c, inverse mode (1/c_k) / sum (1/c); without it every
/// active head gets 1/#active. Heads with c_k = 0 get 0.
std::vector<double> frequency_weights(std::span<const std::size_t> counts, bool balancing,
                                      FrequencyMode mode = FrequencyMode::printed);

/// gamma^(t-1).
double step_weight(double gamma, std::uint32_t step);

struct LossTerm {
  std::size_t head = 0;
  std::uint32_t step = 1;
  double value = 0.0;
};

/// sum_t gamma^(t-1) sum_k w_k L_{k,t} for one sample.
double total_loss(std::span<const LossTerm> terms, std::span<const double> weights, double gamma);

struct ObjectiveConfig {
  double gamma = 0.99;
  std::uint32_t negatives = 32;
  bool in_group_negatives = true;
  bool frequency_balancing = true;
  FrequencyMode frequency_mode = FrequencyMode::printed;

  void validate() const;
  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

struct TrainSample {
  std::uint64_t user = 0;
  std::vector<Interaction> context;
  std::vector<Interaction> horizon;
};

/// Positives and sampled negatives of one sample; negatives[k][j] belongs
/// to positives.per_head[k][j].
struct SampleTargets {
  HeadPositives positives;
  std::vector<std::vector<NegativeSample>> negatives;
};

SampleTargets prepare_targets(const TrainSample& sample, const HeadLayout& layout,
                              const ObjectiveConfig& objective, Rng& rng);

struct BatchStats {
  double loss = 0.0;
  std::size_t samples = 0;
  /// Samples without any positive.
  std::size_t skipped = 0;
  /// Heads with at least one positive in the batch.
  std::size_t active_heads = 0;
  /// Mean unweighted L_{k,t} per head (0 for inactive heads).
  std::vector<double> head_loss;
  std::vector<std::size_t> head_positives;
  /// Terms whose negative draw came up short, and terms skipped for having
  /// no negatives at all.
  std::size_t short_negatives = 0;
  std::size_t lone_positives = 0;
};

/// Batch objective: frequency weights from the batch's positive counts,
/// per-sample discounted sums, averaged over the non-skipped samples. With
/// `grads` the gradient is accumulated; with `dropout` the encoder runs in
/// train mode.
template <class S>
BatchStats batch_loss(const Model<S>& model, std::span<const TrainSample> samples,
                      std::span<const SampleTargets> targets, const ObjectiveConfig& objective,
                      std::vector<S>* grads, Rng* dropout);

template <class S>
class Adam {
 public:
  Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(size, S(0)), v_(size, S(0)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<S>& params, const std::vector<S>& grads, double lr);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  std::vector<S> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  ObjectiveConfig objective;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Linear warmup length; 0 disables it.
  std::uint32_t warmup_steps = 0;
  std::uint32_t batch_size = 64;
  std::uint32_t steps = 1000;
  std::uint64_t seed = 0;
  SamplingPolicy sampling;
  std::uint32_t log_every = 10;
  /// Validation callback schedule; 0 disables it.
  std::uint32_t eval_every = 0;

  void validate() const;
};

struct TrainLogRow {
  std::uint32_t step = 0;
  double loss = 0.0;
  std::vector<double> head_loss;
  std::size_t active_heads = 0;
  std::size_t skipped = 0;
  double wall_seconds = 0.0;
  std::optional<double> validation;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::uint32_t steps_done = 0;
  /// Set when a non-finite loss stopped training; the model then holds the
  /// parameters of the last finite step.
  bool diverged = false;
  std::string error;
};

using WindowFetch = std::function<TrainSample(const WindowRef&)>;
WindowFetch store_fetcher(const UserStore& store, std::uint32_t context_length, std::uint32_t horizon);
WindowFetch memory_fetcher(std::span<const std::vector<Interaction>> sequences,
                           std::uint32_t context_length, std::uint32_t horizon);

/// Adam on the batch objective. Single-threaded and deterministic for a seed.
TrainResult train(Model<float>& model, const WindowIndex& index, const WindowFetch& fetch,
                  const TrainConfig& config,
                  const std::function<double(const Model<float>&)>& validate = {},
                  const std::function<void(const TrainLogRow&)>& on_log = {});

/// step, loss, active_heads, skipped, wall_seconds, validation, then one
/// loss column per head.
std::string train_log_csv(const TrainResult& result, const HeadLayout& layout);

}  // namespace phead
