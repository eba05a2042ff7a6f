// SPDX-License-Identifier: Apache-2.0
#include "phead/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "phead/error.hpp"

namespace phead {

std::size_t HeadPositives::total() const noexcept {
  std::size_t n = 0;
  for (const auto& p : per_head) n += p.size();
  return n;
}

std::size_t HeadPositives::active() const noexcept {
  return static_cast<std::size_t>(std::count(inert.begin(), inert.end(), false));
}

HeadPositives assign_positives(std::span<const Interaction> horizon, const HeadLayout& layout,
                               std::uint64_t user) {
  HeadPositives out;
  const std::size_t heads = layout.head_count();
  out.per_head.resize(heads);
  out.inert.assign(heads, true);
  const auto& axes = layout.spec().axes;
  for (std::size_t k = 0; k < heads; ++k) {
    const auto& head = layout.heads()[k];
    if (!layout.head_serves_user(k, user)) continue;
    for (std::size_t t = 0; t < horizon.size(); ++t) {
      const auto step = static_cast<std::uint32_t>(t + 1);
      const auto& y = horizon[t];
      if (!head.omega.contains(y.item)) continue;
      bool ok = true;
      for (const auto& c : head.constraints) {
        const auto& axis = axes[c.axis];
        if (axis.kind == PriorKind::temporal) {
          const auto& seg = axis.segments[c.group];
          ok = ok && step >= seg.first && step <= seg.last;
        } else if (axis.kind == PriorKind::event) {
          ok = ok && y.event == c.group;
        }
      }
      if (ok) out.per_head[k].push_back({step, y.item});
    }
    out.inert[k] = out.per_head[k].empty();
  }
  return out;
}

namespace {

/// Floyd's algorithm: `count` distinct values from [0, range), sorted.
std::vector<std::size_t> floyd_sample(std::size_t range, std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = range - count; j < range; ++j) {
    const std::size_t t = rng.uniform_index(j + 1);
    if (chosen.insert(t).second) out.push_back(t);
    else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

NegativeSample sample_in_group_negatives(ItemId positive, const CompatibilitySet& omega,
                                         std::size_t n_neg, Rng& rng) {
  const std::size_t pos = omega.rank(positive);
  if (pos == omega.size()) throw ConfigError("positive item is outside the head's compatibility set");
  NegativeSample out;
  const std::size_t available = omega.size() - 1;
  const auto members = omega.members();
  if (available <= n_neg) {
    out.short_sample = available < n_neg;
    for (std::size_t j = 0; j < members.size(); ++j)
      if (j != pos) out.items.push_back(members[j]);
    return out;
  }
  for (auto j : floyd_sample(available, n_neg, rng)) out.items.push_back(members[j < pos ? j : j + 1]);
  return out;
}

NegativeSample sample_catalog_negatives(ItemId positive, std::size_t catalog_size,
                                        std::size_t n_neg, Rng& rng) {
  if (positive >= catalog_size) throw ConfigError("positive item outside catalog");
  NegativeSample out;
  const std::size_t available = catalog_size - 1;
  if (available <= n_neg) {
    out.short_sample = available < n_neg;
    for (ItemId i = 0; i < catalog_size; ++i)
      if (i != positive) out.items.push_back(i);
    return out;
  }
  for (auto j : floyd_sample(available, n_neg, rng))
    out.items.push_back(static_cast<ItemId>(j < positive ? j : j + 1));
  return out;
}

template <class S>
S head_loss(const Vec<S>& query, ItemId positive, std::span<const ItemId> negatives,
            const ConstMatMap<S>& table) {
  const S s0 = item_score(table, positive, query);
  S m = s0;
  std::vector<S> s(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    s[j] = item_score(table, negatives[j], query);
    m = std::max(m, s[j]);
  }
  S z = std::exp(s0 - m);
  for (S x : s) z += std::exp(x - m);
  return m + std::log(z) - s0;
}

template <class S>
S head_loss_backward(const Vec<S>& query, ItemId positive, std::span<const ItemId> negatives,
                     const ConstMatMap<S>& table, S coef, Vec<S>& dq, MatMap<S> d_table) {
  const std::size_t n = negatives.size() + 1;
  std::vector<S> s(n);
  std::vector<ItemId> ids(n);
  ids[0] = positive;
  for (std::size_t j = 1; j < n; ++j) ids[j] = negatives[j - 1];
  S m = -std::numeric_limits<S>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = item_score(table, ids[j], query);
    m = std::max(m, s[j]);
  }
  S z = 0;
  for (S x : s) z += std::exp(x - m);
  const S lse = m + std::log(z);
  for (std::size_t j = 0; j < n; ++j) {
    const S g = coef * (std::exp(s[j] - lse) - (j == 0 ? S(1) : S(0)));
    const auto row = static_cast<Eigen::Index>(ids[j]);
    dq.noalias() += g * table.row(row).transpose();
    d_table.row(row) += g * query.transpose();
  }
  return lse - s[0];
}

std::string_view to_string(FrequencyMode mode) noexcept {
  return mode == FrequencyMode::printed ? "printed" : "inverse";
}

FrequencyMode parse_frequency_mode(std::string_view name) {
  if (name == "printed") return FrequencyMode::printed;
  if (name == "inverse") return FrequencyMode::inverse;
  throw ConfigError("unknown frequency mode '" + std::string(name) + "'");
}

std::vector<double> frequency_weights(std::span<const std::size_t> counts, bool balancing,
                                      FrequencyMode mode) {
  std::vector<double> w(counts.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    if (!balancing) w[k] = 1.0;
    else if (mode == FrequencyMode::printed) w[k] = static_cast<double>(counts[k]);
    else w[k] = 1.0 / static_cast<double>(counts[k]);
    total += w[k];
  }
  if (total > 0.0)
    for (auto& x : w) x /= total;
  return w;
}

double step_weight(double gamma, std::uint32_t step) {
  return std::pow(gamma, static_cast<double>(step) - 1.0);
}

double total_loss(std::span<const LossTerm> terms, std::span<const double> weights, double gamma) {
  double sum = 0.0;
  for (const auto& t : terms) sum += step_weight(gamma, t.step) * weights[t.head] * t.value;
  return sum;
}

void ObjectiveConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (negatives < 1) throw ConfigError("negatives per positive must be >= 1");
}

SampleTargets prepare_targets(const TrainSample& sample, const HeadLayout& layout,
                              const ObjectiveConfig& objective, Rng& rng) {
  SampleTargets out;
  out.positives = assign_positives(sample.horizon, layout, sample.user);
  out.negatives.resize(layout.head_count());
  for (std::size_t k = 0; k < layout.head_count(); ++k) {
    for (const auto& p : out.positives.per_head[k]) {
      if (objective.in_group_negatives)
        out.negatives[k].push_back(
            sample_in_group_negatives(p.item, layout.heads()[k].omega, objective.negatives, rng));
      else
        out.negatives[k].push_back(
            sample_catalog_negatives(p.item, layout.catalog_size(), objective.negatives, rng));
    }
  }
  return out;
}

template <class S>
BatchStats batch_loss(const Model<S>& model, std::span<const TrainSample> samples,
                      std::span<const SampleTargets> targets, const ObjectiveConfig& objective,
                      std::vector<S>* grads, Rng* dropout) {
  const auto& layout = model.heads();
  const std::size_t heads = layout.head_count();
  BatchStats stats;
  stats.head_loss.assign(heads, 0.0);
  stats.head_positives.assign(heads, 0);
  std::size_t used = 0;
  for (const auto& t : targets) {
    if (t.positives.total() == 0) continue;
    ++used;
    for (std::size_t k = 0; k < heads; ++k) stats.head_positives[k] += t.positives.per_head[k].size();
  }
  stats.samples = samples.size();
  stats.skipped = samples.size() - used;
  if (used == 0) return stats;
  const auto weights =
      frequency_weights(stats.head_positives, objective.frequency_balancing, objective.frequency_mode);
  for (auto c : stats.head_positives) stats.active_heads += c > 0 ? 1 : 0;

  const auto table = model.item_table();
  const auto& params = model.params();
  const std::size_t d = model.config().d_model;
  const S inv_b = S(1) / static_cast<S>(used);
  typename Encoder<S>::Cache enc_cache;
  typename AdapterBank<S>::Cache head_cache;
  std::vector<Vec<S>> dq(heads);
  std::vector<double> term_sum(heads, 0.0);
  std::vector<std::size_t> term_count(heads, 0);

  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& tg = targets[b];
    if (tg.positives.total() == 0) continue;
    const auto& ctx = samples[b].context;
    if (ctx.empty()) throw ConfigError("training sample with empty context");
    Mat<S> out = model.encoder().forward(params, ctx, ctx.size() - 1, grads ? &enc_cache : nullptr, dropout);
    const Vec<S> h = out.row(0).transpose();
    model.adapters().forward(params, h, head_cache);

    for (std::size_t k = 0; k < heads; ++k) {
      const auto& pos = tg.positives.per_head[k];
      if (pos.empty()) {
        dq[k].resize(0);
        continue;
      }
      if (grads) dq[k] = Vec<S>::Zero(static_cast<Eigen::Index>(d));
      const Vec<S>& q = model.adapters().query(head_cache, k);
      for (std::size_t j = 0; j < pos.size(); ++j) {
        const auto& neg = tg.negatives[k][j];
        if (neg.short_sample) ++stats.short_negatives;
        if (neg.items.empty()) {
          ++stats.lone_positives;
          continue;
        }
        const S coef = static_cast<S>(step_weight(objective.gamma, pos[j].step) * weights[k]) * inv_b;
        S value;
        if (grads) {
          value = head_loss_backward<S>(q, pos[j].item, neg.items, table, coef, dq[k],
                                        model.layout().map(*grads, model.encoder().item_embedding_id()));
        } else {
          value = head_loss<S>(q, pos[j].item, neg.items, table);
        }
        if (!std::isfinite(static_cast<double>(value)))
          throw NumericError("non-finite loss at head " + std::to_string(k) + " " +
                             to_string(layout.heads()[k].path) + " (" + layout.describe(k) + ")");
        stats.loss += static_cast<double>(coef) * static_cast<double>(value);
        term_sum[k] += static_cast<double>(value);
        ++term_count[k];
      }
    }
    if (grads) {
      const Vec<S> dh = model.adapters().backward(params, head_cache, dq, *grads);
      Mat<S> d_out = dh.transpose();
      model.encoder().backward(params, enc_cache, d_out, *grads);
    }
  }
  for (std::size_t k = 0; k < heads; ++k)
    if (term_count[k]) stats.head_loss[k] = term_sum[k] / static_cast<double>(term_count[k]);
  return stats;
}

template float head_loss<float>(const Vec<float>&, ItemId, std::span<const ItemId>,
                                const ConstMatMap<float>&);
template double head_loss<double>(const Vec<double>&, ItemId, std::span<const ItemId>,
                                  const ConstMatMap<double>&);
template float head_loss_backward<float>(const Vec<float>&, ItemId, std::span<const ItemId>,
                                         const ConstMatMap<float>&, float, Vec<float>&,
                                         MatMap<float>);
template double head_loss_backward<double>(const Vec<double>&, ItemId, std::span<const ItemId>,
                                           const ConstMatMap<double>&, double, Vec<double>&,
                                           MatMap<double>);
template BatchStats batch_loss<float>(const Model<float>&, std::span<const TrainSample>,
                                      std::span<const SampleTargets>, const ObjectiveConfig&,
                                      std::vector<float>*, Rng*);
template BatchStats batch_loss<double>(const Model<double>&, std::span<const TrainSample>,
                                       std::span<const SampleTargets>, const ObjectiveConfig&,
                                       std::vector<double>*, Rng*);

template <class S>
void Adam<S>::step(std::vector<S>& params, const std::vector<S>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
  const S step = static_cast<S>(lr / c1);
  const S root_c2 = static_cast<S>(std::sqrt(c2));
  const S eps = static_cast<S>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S g = grads[i];
    m_[i] = b1 * m_[i] + (S(1) - b1) * g;
    v_[i] = b2 * v_[i] + (S(1) - b2) * g * g;
    params[i] -= step * m_[i] / (std::sqrt(v_[i]) / root_c2 + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

void TrainConfig::validate() const {
  objective.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

WindowFetch store_fetcher(const UserStore& store, std::uint32_t context_length, std::uint32_t horizon) {
  return [&store, context_length, horizon](const WindowRef& w) {
    TrainSample s;
    s.user = store.entry(w.user).id;
    store.fetch_window(w.user, w.start, context_length, horizon, s.context, s.horizon);
    return s;
  };
}

WindowFetch memory_fetcher(std::span<const std::vector<Interaction>> sequences,
                           std::uint32_t context_length, std::uint32_t horizon) {
  return [sequences, context_length, horizon](const WindowRef& w) {
    const auto& seq = sequences[w.user];
    if (w.start + context_length + horizon > seq.size()) throw DataError("window past end of sequence");
    TrainSample s;
    s.user = w.user;
    const auto begin = seq.begin() + w.start;
    s.context.assign(begin, begin + context_length);
    s.horizon.assign(begin + context_length, begin + context_length + horizon);
    return s;
  };
}

TrainResult train(Model<float>& model, const WindowIndex& index, const WindowFetch& fetch,
                  const TrainConfig& config,
                  const std::function<double(const Model<float>&)>& validate,
                  const std::function<void(const TrainLogRow&)>& on_log) {
  config.validate();
  if (index.empty()) throw DataError("no training windows (sequences shorter than T + tau?)");
  const WindowSampler sampler(index, config.sampling);
  Adam<float> adam(model.params().size(), config.beta1, config.beta2, config.adam_eps);
  std::vector<float> grads(model.params().size());
  std::vector<float> last_good = model.params();
  std::vector<TrainSample> samples(config.batch_size);
  std::vector<SampleTargets> targets(config.batch_size);
  TrainResult result;
  const auto start = std::chrono::steady_clock::now();

  for (std::uint32_t step = 1; step <= config.steps; ++step) {
    Rng batch_rng(derive_seed(config.seed, 3ull * step));
    Rng negative_rng(derive_seed(config.seed, 3ull * step + 1));
    Rng dropout_rng(derive_seed(config.seed, 3ull * step + 2));
    for (std::uint32_t b = 0; b < config.batch_size; ++b) {
      samples[b] = fetch(sampler.draw(batch_rng));
      targets[b] = prepare_targets(samples[b], model.heads(), config.objective, negative_rng);
    }
    std::fill(grads.begin(), grads.end(), 0.0f);
    BatchStats stats;
    try {
      stats = batch_loss<float>(model, samples, targets, config.objective, &grads, &dropout_rng);
    } catch (const NumericError& e) {
      result.diverged = true;
      result.error = "step " + std::to_string(step) + ": " + e.what();
    }
    if (!result.diverged && !std::isfinite(stats.loss)) {
      result.diverged = true;
      result.error = "step " + std::to_string(step) + ": non-finite batch loss";
    }
    if (!result.diverged &&
        std::any_of(grads.begin(), grads.end(), [](float g) { return !std::isfinite(g); })) {
      result.diverged = true;
      result.error = "step " + std::to_string(step) + ": non-finite gradient";
    }
    if (result.diverged) {
      model.params() = last_good;
      return result;
    }
    last_good = model.params();
    double lr = config.lr;
    if (config.warmup_steps > 0) lr *= std::min(1.0, static_cast<double>(step) / config.warmup_steps);
    adam.step(model.params(), grads, lr);
    if (std::any_of(model.params().begin(), model.params().end(),
                    [](float p) { return !std::isfinite(p); })) {
      model.params() = last_good;
      result.diverged = true;
      result.error = "step " + std::to_string(step) + ": non-finite parameters after update";
      return result;
    }
    result.steps_done = step;

    const bool log_now = step % config.log_every == 0 || step == config.steps;
    const bool eval_now = validate && config.eval_every > 0 &&
                          (step % config.eval_every == 0 || step == config.steps);
    if (log_now || eval_now) {
      TrainLogRow row;
      row.step = step;
      row.loss = stats.loss;
      row.head_loss = stats.head_loss;
      row.active_heads = stats.active_heads;
      row.skipped = stats.skipped;
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (eval_now) row.validation = validate(model);
      if (on_log) on_log(row);
      result.log.push_back(std::move(row));
    }
  }
  return result;
}

std::string train_log_csv(const TrainResult& result, const HeadLayout& layout) {
  std::ostringstream out;
  out.precision(8);
  out << "step,loss,active_heads,skipped,wall_seconds,validation";
  for (std::size_t k = 0; k < layout.head_count(); ++k) out << ",loss_" << layout.describe(k);
  out << '\n';
  for (const auto& r : result.log) {
    out << r.step << ',' << r.loss << ',' << r.active_heads << ',' << r.skipped << ','
        << r.wall_seconds << ',';
    if (r.validation) out << *r.validation;
    for (double v : r.head_loss) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace phead
