#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "phead/error.hpp"
#include "phead/priors.hpp"
#include "phead/training.hpp"
#include "small_model.hpp"

namespace phead {
namespace {

using testing::make_layout;

std::vector<Interaction> horizon_of(std::initializer_list<std::pair<ItemId, int>> items) {
  std::vector<Interaction> out;
  std::int64_t t = 0;
  for (auto [i, e] : items) out.push_back({i, static_cast<std::uint8_t>(e), ++t});
  return out;
}

TEST(AssignPositives, TemporalSegmentsSplitTheHorizon) {
  auto cat = testing::striped_catalog(10, 1);
  const auto layout = make_layout(PriorSpec{{temporal_axis(6, 2)}}, cat);
  const auto pos = assign_positives(horizon_of({{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}}), *layout);
  ASSERT_EQ(pos.per_head.size(), 2u);
  EXPECT_EQ(pos.per_head[0], (std::vector<Positive>{{1, 1}, {2, 2}, {3, 3}}));
  EXPECT_EQ(pos.per_head[1], (std::vector<Positive>{{4, 4}, {5, 5}, {6, 6}}));
  EXPECT_EQ(pos.active(), 2u);
}

TEST(AssignPositives, MultiHotTargetFeedsEveryCategory) {
  ItemCatalog cat(5, 3, 1);
  for (ItemId i = 0; i < 5; ++i) cat.set_event_accessible(i, 0);
  cat.set_category(0, 1);
  cat.set_category(0, 2);
  cat.set_category(1, 0);
  const auto layout = make_layout(PriorSpec{{PriorAxis{PriorKind::item, 3}}}, cat);
  const auto pos = assign_positives(horizon_of({{0, 0}}), *layout);
  EXPECT_TRUE(pos.inert[0]);
  EXPECT_EQ(pos.per_head[1].size(), 1u);
  EXPECT_EQ(pos.per_head[2].size(), 1u);
  EXPECT_EQ(pos.total(), 2u);
}

TEST(AssignPositives, MatchesPredicateOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    auto cat = testing::random_catalog(rng, 40, 3, 3, true);
    PriorAxis user{PriorKind::user, 2};
    user.user_groups = {0, 1, 0, 1};
    const PriorSpec spec{{PriorAxis{PriorKind::item, 3}, temporal_axis(50, 3), PriorAxis{PriorKind::event, 3}, user}};
    for (auto comp : {Composition::hierarchical, Composition::additive}) {
      const auto layout = make_layout(spec, cat, comp);
      auto horizon = testing::random_sequence(rng, 50, 40, 3);
      const std::uint64_t uid = rng.uniform_index(5);  // 4 is not in the table
      const auto pos = assign_positives(horizon, *layout, uid);
      for (std::size_t k = 0; k < layout->head_count(); ++k) {
        const auto& path = layout->heads()[k].path;
        std::vector<Positive> want;
        for (std::size_t t = 0; t < horizon.size(); ++t) {
          const auto& y = horizon[t];
          const auto step = static_cast<std::uint32_t>(t + 1);
          bool ok = true;
          const auto g = [&](int axis) { return path.groups[static_cast<std::size_t>(axis)]; };
          if (g(0) >= 0) ok = ok && cat.has_category(y.item, static_cast<unsigned>(g(0)));
          if (g(1) >= 0) {
            const auto seg = spec.axes[1].segments[static_cast<std::size_t>(g(1))];
            ok = ok && step >= seg.first && step <= seg.last;
          }
          if (g(2) >= 0) ok = ok && y.event == g(2) && cat.event_accessible(y.item, static_cast<unsigned>(g(2)));
          if (g(3) >= 0) ok = ok && uid < 4 && static_cast<std::int32_t>(user.user_groups[uid]) == g(3);
          if (ok) want.push_back({step, y.item});
        }
        ASSERT_EQ(pos.per_head[k], want) << "head " << to_string(path);
        EXPECT_EQ(pos.inert[k], want.empty());
      }
    }
  }
}

TEST(Negatives, ForcedAndShortDraws) {
  Rng rng(1);
  const CompatibilitySet abc(10, {2, 5, 7});
  EXPECT_EQ(sample_in_group_negatives(2, abc, 2, rng).items, (std::vector<ItemId>{5, 7}));
  const CompatibilitySet ab(10, {2, 5});
  const auto s = sample_in_group_negatives(2, ab, 5, rng);
  EXPECT_EQ(s.items, (std::vector<ItemId>{5}));
  EXPECT_TRUE(s.short_sample);
  const auto lone = sample_in_group_negatives(2, CompatibilitySet(10, {2}), 3, rng);
  EXPECT_TRUE(lone.items.empty());
  EXPECT_THROW(sample_in_group_negatives(3, abc, 1, rng), ConfigError);
  const auto cat = sample_catalog_negatives(4, 5, 10, rng);
  EXPECT_EQ(cat.items, (std::vector<ItemId>{0, 1, 2, 3}));
}

TEST(Negatives, DrawsAreDistinctInGroupAndExcludePositive) {
  Rng rng(9);
  std::vector<ItemId> members;
  for (ItemId i = 0; i < 100; i += 3) members.push_back(i);
  const CompatibilitySet omega(100, members);
  for (int t = 0; t < 500; ++t) {
    const ItemId pos = members[rng.uniform_index(members.size())];
    const auto s = sample_in_group_negatives(pos, omega, 8, rng);
    ASSERT_EQ(s.items.size(), 8u);
    EXPECT_TRUE(std::is_sorted(s.items.begin(), s.items.end()));
    EXPECT_EQ(std::set<ItemId>(s.items.begin(), s.items.end()).size(), 8u);
    for (ItemId i : s.items) {
      EXPECT_TRUE(omega.contains(i));
      EXPECT_NE(i, pos);
    }
    const auto c = sample_catalog_negatives(pos, 100, 8, rng);
    for (ItemId i : c.items) EXPECT_NE(i, pos);
  }
}

// Chi-square goodness of fit; 18 degrees of freedom, p = 0.01 critical value.
TEST(Negatives, UniformOverGroup) {
  std::vector<ItemId> members;
  for (ItemId i = 0; i < 20; ++i) members.push_back(3 * i + 1);
  const CompatibilitySet omega(80, members);
  for (std::size_t n_neg : {1u, 5u}) {
    Rng rng(2024 + n_neg);
    std::map<ItemId, double> counts;
    const int draws = 100000;
    for (int t = 0; t < draws; ++t)
      for (ItemId i : sample_in_group_negatives(members[0], omega, n_neg, rng).items) counts[i] += 1;
    ASSERT_EQ(counts.size(), 19u);
    const double expected = static_cast<double>(draws) * static_cast<double>(n_neg) / 19.0;
    double chi2 = 0;
    for (auto [item, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_LT(chi2, 34.805) << "n_neg " << n_neg;
  }
}

Mat<double> random_table(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Mat<double> t(n, d);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

TEST(HeadLoss, TwoWayTieIsLn2) {
  Mat<double> table = Mat<double>::Ones(2, 3);
  ConstMatMap<double> map(table.data(), 2, 3);
  Vec<double> q = Vec<double>::Constant(3, 0.7);
  EXPECT_NEAR(head_loss<double>(q, 0, std::vector<ItemId>{1}, map), 0.693147, 1e-6);
}

TEST(HeadLoss, DominantPositiveGoesToZero) {
  Mat<double> table(3, 1);
  table << 1000, -1000, 0;
  ConstMatMap<double> map(table.data(), 3, 1);
  Vec<double> q = Vec<double>::Constant(1, 1.0);
  const double loss = head_loss<double>(q, 0, std::vector<ItemId>{1, 2}, map);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_LT(loss, 1e-300);
  EXPECT_NEAR(head_loss<double>(q, 2, std::vector<ItemId>{0, 1}, map), 1000.0, 1e-9);
}

TEST(HeadLoss, FullGroupEqualsDenseSoftmax) {
  Rng rng(4);
  const Mat<double> table = random_table(rng, 60, 6);
  ConstMatMap<double> map(table.data(), 60, 6);
  std::vector<ItemId> group;
  for (ItemId i = 0; i < 60; i += 2) group.push_back(i);
  Vec<double> q(6);
  for (auto& v : q) v = rng.normal() * 2;
  for (ItemId pos : group) {
    std::vector<ItemId> negs;
    for (ItemId i : group)
      if (i != pos) negs.push_back(i);
    double z = 0;
    for (ItemId i : group) z += std::exp(table.row(i).dot(q));
    const double dense = -std::log(std::exp(table.row(pos).dot(q)) / z);
    EXPECT_NEAR(head_loss<double>(q, pos, negs, map), dense, 1e-6);
    auto rev = negs;
    std::reverse(rev.begin(), rev.end());
    EXPECT_NEAR(head_loss<double>(q, pos, rev, map), head_loss<double>(q, pos, negs, map), 1e-12);
  }
}

TEST(HeadLoss, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  Mat<double> table = random_table(rng, 12, 4);
  Vec<double> q(4);
  for (auto& v : q) v = rng.normal();
  const std::vector<ItemId> negs{1, 5, 9, 11};
  Vec<double> dq = Vec<double>::Zero(4);
  Mat<double> dt = Mat<double>::Zero(12, 4);
  const double value = head_loss_backward<double>(q, 3, negs, ConstMatMap<double>(table.data(), 12, 4), 0.5,
                                                  dq, MatMap<double>(dt.data(), 12, 4));
  const auto f = [&](const Vec<double>& qq, const Mat<double>& tt) {
    return head_loss<double>(qq, 3, negs, ConstMatMap<double>(tt.data(), 12, 4));
  };
  EXPECT_NEAR(value, f(q, table), 1e-14);
  for (int j = 0; j < 4; ++j) {
    Vec<double> a = q, b = q;
    a(j) += 1e-6;
    b(j) -= 1e-6;
    EXPECT_NEAR(dq(j), 0.5 * (f(a, table) - f(b, table)) / 2e-6, 1e-8);
  }
  for (Eigen::Index i = 0; i < table.size(); ++i) {
    Mat<double> a = table, b = table;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    EXPECT_NEAR(dt.data()[i], 0.5 * (f(q, a) - f(q, b)) / 2e-6, 1e-8);
  }
}

TEST(FrequencyWeights, PrintedInverseAndUniform) {
  const std::vector<std::size_t> counts{3, 1};
  EXPECT_EQ(frequency_weights(counts, true), (std::vector<double>{0.75, 0.25}));
  const auto inv = frequency_weights(counts, true, FrequencyMode::inverse);
  EXPECT_DOUBLE_EQ(inv[0], 0.25);
  EXPECT_DOUBLE_EQ(inv[1], 0.75);
  EXPECT_EQ(frequency_weights(std::vector<std::size_t>{3, 0, 1}, false), (std::vector<double>{0.5, 0.0, 0.5}));
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> c(1 + rng.uniform_index(10));
    for (auto& v : c) v = rng.uniform_index(5);
    c[0] += 1;
    for (auto mode : {FrequencyMode::printed, FrequencyMode::inverse})
      for (bool bal : {true, false}) {
        const auto w = frequency_weights(c, bal, mode);
        double sum = 0;
        for (std::size_t k = 0; k < c.size(); ++k) {
          sum += w[k];
          if (c[k] == 0) {
            EXPECT_EQ(w[k], 0.0);
          }
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
  }
  EXPECT_EQ(parse_frequency_mode("inverse"), FrequencyMode::inverse);
  EXPECT_THROW(parse_frequency_mode("log"), ConfigError);
}

TEST(TotalLoss, HandUnrolledDoubleSum) {
  EXPECT_EQ(step_weight(0.99, 1), 1.0);
  EXPECT_DOUBLE_EQ(step_weight(0.5, 3), 0.25);
  EXPECT_EQ(step_weight(1.0, 8), 1.0);
  const std::vector<LossTerm> terms{{0, 1, 1.2}, {0, 2, 0.4}, {0, 3, 2.0}, {1, 1, 0.1}, {1, 2, 0.9}, {1, 3, 0.3}};
  const std::vector<double> w{0.75, 0.25};
  const double g = 0.9;
  const double want = 1.0 * (0.75 * 1.2 + 0.25 * 0.1) + 0.9 * (0.75 * 0.4 + 0.25 * 0.9) +
                      0.81 * (0.75 * 2.0 + 0.25 * 0.3);
  EXPECT_NEAR(total_loss(terms, w, g), want, 1e-12);
}

struct Fixture {
  ItemCatalog cat = testing::striped_catalog(24, 3);
  std::shared_ptr<const HeadLayout> layout;
  Model<double> model;
  std::vector<TrainSample> samples;
  explicit Fixture(const PriorSpec& spec, std::size_t n_samples = 4, std::uint32_t tau = 4,
                   Composition comp = Composition::hierarchical)
      : layout(make_layout(spec, cat, comp)), model(testing::tiny_encoder(24), layout) {
    model.init(5);
    Rng rng(6);
    testing::randomize_all(model, rng);
    for (std::size_t b = 0; b < n_samples; ++b) {
      TrainSample s;
      s.user = b;
      s.context = testing::random_sequence(rng, 6 + b, 24);
      s.horizon = testing::random_sequence(rng, tau, 24);
      samples.push_back(std::move(s));
    }
  }
};

TEST(BatchLoss, EqualsWeightedSumOfHeadLosses) {
  Fixture f(PriorSpec{{temporal_axis(4, 2), PriorAxis{PriorKind::item, 3}}});
  ObjectiveConfig obj;
  obj.gamma = 0.9;
  obj.negatives = 3;
  Rng rng(1);
  std::vector<SampleTargets> targets;
  for (const auto& s : f.samples) targets.push_back(prepare_targets(s, *f.layout, obj, rng));
  const auto stats = batch_loss<double>(f.model, f.samples, targets, obj, nullptr, nullptr);

  std::vector<std::size_t> counts(f.layout->head_count(), 0);
  for (const auto& t : targets)
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += t.positives.per_head[k].size();
  const auto w = frequency_weights(counts, true);
  double want = 0;
  const auto table = f.model.item_table();
  for (std::size_t b = 0; b < f.samples.size(); ++b) {
    const auto qs = f.model.queries(f.model.user_state(f.samples[b].context));
    std::vector<LossTerm> terms;
    for (std::size_t k = 0; k < counts.size(); ++k)
      for (std::size_t j = 0; j < targets[b].positives.per_head[k].size(); ++j) {
        const auto& p = targets[b].positives.per_head[k][j];
        terms.push_back({k, p.step, head_loss<double>(qs[k], p.item, targets[b].negatives[k][j].items, table)});
      }
    want += total_loss(terms, w, 0.9);
  }
  EXPECT_NEAR(stats.loss, want / static_cast<double>(f.samples.size()), 1e-12);
  EXPECT_EQ(stats.skipped, 0u);
}

TEST(BatchLoss, InertHeadGetsZeroGradient) {
  Fixture f(PriorSpec{{PriorAxis{PriorKind::item, 3}}});
  // every horizon item in category 0 or 1
  for (auto& s : f.samples)
    for (auto& y : s.horizon) y.item = (y.item / 3) * 3 + (y.item % 2);
  ObjectiveConfig obj;
  obj.negatives = 4;
  Rng rng(2);
  std::vector<SampleTargets> targets;
  for (const auto& s : f.samples) targets.push_back(prepare_targets(s, *f.layout, obj, rng));
  std::vector<double> grads(f.model.params().size(), 0.0);
  const auto stats = batch_loss<double>(f.model, f.samples, targets, obj, &grads, nullptr);
  EXPECT_EQ(stats.head_positives[2], 0u);
  const auto& t = f.model.layout().tensor(f.model.adapters().weight_id(2));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(grads[t.offset + i], 0.0);
  const auto& t0 = f.model.layout().tensor(f.model.adapters().weight_id(0));
  double norm = 0;
  for (std::size_t i = 0; i < t0.size(); ++i) norm += std::abs(grads[t0.offset + i]);
  EXPECT_GT(norm, 0.0);
}

TEST(BatchLoss, SingleHeadReducesToNextItemCrossEntropy) {
  Fixture f(PriorSpec{{PriorAxis{PriorKind::all, 1}}}, 5, 1);
  f.model.adapters().init(f.model.params());  // q = h
  ObjectiveConfig obj;
  obj.negatives = 1000;  // the whole catalog
  obj.in_group_negatives = true;
  Rng rng(3);
  std::vector<SampleTargets> targets;
  for (const auto& s : f.samples) targets.push_back(prepare_targets(s, *f.layout, obj, rng));
  const auto stats = batch_loss<double>(f.model, f.samples, targets, obj, nullptr, nullptr);
  double want = 0;
  const auto table = f.model.item_table();
  std::vector<ItemId> all(24);
  for (ItemId i = 0; i < 24; ++i) all[i] = i;
  for (const auto& s : f.samples) {
    const auto scores = baseline_score<double>(f.model.user_state(s.context), table, all);
    double z = 0;
    for (double v : scores) z += std::exp(v);
    want += std::log(z) - scores[s.horizon[0].item];
  }
  EXPECT_NEAR(stats.loss, want / 5.0, 1e-10);
}

TEST(BatchLoss, SkipsSamplesWithoutPositives) {
  ItemCatalog cat(10, 2, 1);
  for (ItemId i = 0; i < 10; ++i) {
    cat.set_category(i, 0);
    cat.set_event_accessible(i, 0);
  }
  cat.set_category(9, 0, false);  // uncategorized
  const auto layout = make_layout(PriorSpec{{PriorAxis{PriorKind::item, 2}}}, cat);
  Model<double> model(testing::tiny_encoder(10), layout);
  model.init(1);
  TrainSample s;
  s.context = {{1, 0, 1}};
  s.horizon = {{9, 0, 2}};
  ObjectiveConfig obj;
  Rng rng(1);
  const std::vector<TrainSample> samples{s};
  const std::vector<SampleTargets> targets{prepare_targets(s, *layout, obj, rng)};
  const auto stats = batch_loss<double>(model, samples, targets, obj, nullptr, nullptr);
  EXPECT_EQ(stats.skipped, 1u);
  EXPECT_EQ(stats.loss, 0.0);
}

TEST(Adam, MatchesClosedFormFirstSteps) {
  std::vector<double> p{1.0, -2.0}, g{0.5, -0.1};
  Adam<double> adam(2);
  adam.step(p, g, 0.1);
  // first step moves by lr * sign(g) up to epsilon
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -1.9, 1e-6);
  std::vector<double> q = p;
  Adam<double> zero(2);
  zero.step(q, g, 0.0);
  EXPECT_EQ(q, p);
}

TrainSample window_sample(const std::vector<std::vector<Interaction>>& seqs, const WindowRef& w,
                          std::uint32_t T, std::uint32_t tau) {
  TrainSample s;
  s.user = w.user;
  const auto& seq = seqs[w.user];
  s.context.assign(seq.begin() + w.start, seq.begin() + w.start + T);
  s.horizon.assign(seq.begin() + w.start + T, seq.begin() + w.start + T + tau);
  return s;
}

struct TrainSetup {
  ItemCatalog cat = testing::striped_catalog(30, 3);
  std::vector<std::vector<Interaction>> seqs;
  std::vector<std::uint32_t> lengths;
  WindowIndex index;
  TrainSetup() {
    // each user cycles through one category
    for (std::uint32_t u = 0; u < 30; ++u) {
      std::vector<Interaction> seq;
      for (std::int64_t t = 0; t < 20; ++t)
        seq.push_back({static_cast<ItemId>((u % 3) + 3 * ((t + u) % 10)), 0, t});
      seqs.push_back(seq);
      lengths.push_back(20);
    }
    index = build_window_index(lengths, 8, 2, 1);
  }
};

TEST(Train, ZeroLearningRateLeavesParameters) {
  TrainSetup s;
  Model<float> model(testing::tiny_encoder(30, 1, 8, 1, 8), make_layout(PriorSpec{{PriorAxis{PriorKind::item, 3}}}, s.cat));
  model.init(1);
  const auto before = model.params();
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.steps = 5;
  cfg.batch_size = 4;
  const auto result = train(model, s.index, memory_fetcher(s.seqs, 8, 2), cfg);
  EXPECT_EQ(result.steps_done, 5u);
  EXPECT_EQ(model.params(), before);
}

TEST(Train, DeterministicAndLossDecreases) {
  TrainSetup s;
  const auto layout = make_layout(PriorSpec{{temporal_axis(2, 2), PriorAxis{PriorKind::item, 3}}}, s.cat);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.steps = 200;
  cfg.batch_size = 16;
  cfg.log_every = 10;
  cfg.seed = 4;
  cfg.objective.negatives = 5;
  std::vector<TrainResult> results;
  std::vector<std::vector<float>> params;
  for (int run = 0; run < 2; ++run) {
    Model<float> model(testing::tiny_encoder(30, 1, 8, 1, 8), layout);
    model.init(2);
    results.push_back(train(model, s.index, memory_fetcher(s.seqs, 8, 2), cfg));
    params.push_back(model.params());
  }
  EXPECT_EQ(params[0], params[1]);
  const auto& log = results[0].log;
  ASSERT_EQ(log.size(), 20u);
  // smoothed trend: mean of the last five logged losses well below the first five
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += log[static_cast<std::size_t>(i)].loss;
    tail += log[log.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, 0.7 * head);
  const std::string csv = train_log_csv(results[0], *layout);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "step,loss,active_heads,skipped,wall_seconds,validation,loss_ST/cat0,loss_ST/cat1,loss_ST/cat2,"
            "loss_LT/cat0,loss_LT/cat1,loss_LT/cat2");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 21u);
}

TEST(Train, DifferentSeedsDiffer) {
  TrainSetup s;
  const auto layout = make_layout(PriorSpec{{PriorAxis{PriorKind::item, 3}}}, s.cat);
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 4;
  std::vector<std::vector<float>> params;
  for (std::uint64_t seed : {1u, 2u}) {
    cfg.seed = seed;
    Model<float> model(testing::tiny_encoder(30, 1, 8, 1, 8), layout);
    model.init(1);
    train(model, s.index, memory_fetcher(s.seqs, 8, 2), cfg);
    params.push_back(model.params());
  }
  EXPECT_NE(params[0], params[1]);
}

TEST(Train, MemoryFetcherCutsWindows) {
  TrainSetup s;
  const auto fetch = memory_fetcher(s.seqs, 8, 2);
  const auto sample = fetch(WindowRef{3, 5});
  const auto want = window_sample(s.seqs, WindowRef{3, 5}, 8, 2);
  EXPECT_EQ(sample.context, want.context);
  EXPECT_EQ(sample.horizon, want.horizon);
  EXPECT_EQ(sample.user, 3u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.objective.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.objective.gamma = 1.0;
  EXPECT_NO_THROW(c.validate());
  c.objective.negatives = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.objective.negatives = 1;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace phead
