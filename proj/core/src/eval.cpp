// SPDX-License-Identifier: Apache-2.0
#include "phead/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "phead/error.hpp"

namespace phead {

namespace {

std::vector<ItemId> dedup(std::span<const ItemId> items) {
  std::vector<ItemId> out(items.begin(), items.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_k(std::size_t k) {
  if (k == 0) throw ConfigError("K must be >= 1");
}

/// Hit ranks (1-based) of distinct target items within the first K entries.
std::vector<std::size_t> hit_ranks(std::span<const ItemId> ranked, const std::vector<ItemId>& targets,
                                   std::size_t k) {
  std::vector<bool> seen(targets.size(), false);
  std::vector<std::size_t> out;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r) {
    auto it = std::lower_bound(targets.begin(), targets.end(), ranked[r]);
    if (it == targets.end() || *it != ranked[r]) continue;
    const auto pos = static_cast<std::size_t>(it - targets.begin());
    if (seen[pos]) continue;
    seen[pos] = true;
    out.push_back(r + 1);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

std::optional<double> recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets,
                                  std::size_t k) {
  check_k(k);
  const auto t = dedup(targets);
  if (t.empty()) return std::nullopt;
  return static_cast<double>(hit_ranks(ranked, t, k).size()) / static_cast<double>(t.size());
}

std::optional<double> ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets,
                                std::size_t k) {
  check_k(k);
  const auto t = dedup(targets);
  if (t.empty()) return std::nullopt;
  double dcg = 0.0;
  for (auto r : hit_ranks(ranked, t, k)) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  double idcg = 0.0;
  const std::size_t n = std::min(k, t.size());
  for (std::size_t r = 1; r <= n; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

double entropy_at_k(std::span<const ItemId> ranked, const ItemCatalog& catalog, std::size_t k) {
  check_k(k);
  std::vector<std::size_t> counts(catalog.num_categories(), 0);
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    for (unsigned c : catalog.categories(ranked[r])) ++counts[c];
  double h = 0.0;
  const double kk = static_cast<double>(k);
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / kk;
    h -= p * std::log2(p);
  }
  return h;
}

bool is_new_interest(std::span<const Interaction> context, std::span<const Interaction> targets,
                     const ItemCatalog& catalog) {
  std::vector<bool> seen(catalog.num_categories(), false);
  for (const auto& x : context)
    for (unsigned c : catalog.categories(x.item)) seen[c] = true;
  for (const auto& y : targets)
    for (unsigned c : catalog.categories(y.item))
      if (!seen[c]) return true;
  return false;
}

std::vector<std::size_t> new_interest_users(std::span<const std::vector<Interaction>> histories,
                                            std::span<const std::vector<Interaction>> targets,
                                            const ItemCatalog& catalog) {
  if (histories.size() != targets.size())
    throw ConfigError("histories and targets must have one entry per user");
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < histories.size(); ++u)
    if (is_new_interest(histories[u], targets[u], catalog)) out.push_back(u);
  return out;
}

UserMetrics score_user(std::uint64_t user, std::span<const ItemId> ranked,
                       std::span<const ItemId> targets, std::span<const std::size_t> ks,
                       std::size_t entropy_k, const ItemCatalog& catalog) {
  UserMetrics m;
  m.user = user;
  for (auto k : ks) {
    auto r = recall_at_k(ranked, targets, k);
    if (!r) return m;
    m.recall.push_back(*r);
    m.ndcg.push_back(*ndcg_at_k(ranked, targets, k));
  }
  m.entropy = entropy_at_k(ranked, catalog, entropy_k);
  m.valid = true;
  return m;
}

double MetricReport::recall_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw ConfigError("report has no recall@" + std::to_string(k));
}

double MetricReport::ndcg_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return ndcg[i];
  throw ConfigError("report has no ndcg@" + std::to_string(k));
}

MetricReport summarize(std::span<const UserMetrics> users, std::span<const std::size_t> ks,
                       std::size_t entropy_k) {
  MetricReport r;
  r.ks.assign(ks.begin(), ks.end());
  r.entropy_k = entropy_k;
  r.recall.assign(ks.size(), 0.0);
  r.ndcg.assign(ks.size(), 0.0);
  for (const auto& u : users) {
    if (!u.valid) {
      ++r.excluded;
      continue;
    }
    ++r.users;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      r.recall[i] += u.recall[i];
      r.ndcg[i] += u.ndcg[i];
    }
    r.entropy += u.entropy;
  }
  if (r.users > 0) {
    const double n = static_cast<double>(r.users);
    for (auto& v : r.recall) v /= n;
    for (auto& v : r.ndcg) v /= n;
    r.entropy /= n;
  }
  return r;
}

GroupReport per_group_report(std::span<const UserMetrics> users,
                             std::span<const std::uint32_t> user_clusters,
                             std::span<const std::size_t> ks, std::size_t entropy_k,
                             std::span<const UserMetrics> baseline, std::string baseline_name) {
  const auto group_of = [&](std::uint64_t user) -> std::string {
    if (user < user_clusters.size()) return std::to_string(user_clusters[user]);
    return "unknown";
  };
  std::map<std::string, std::vector<UserMetrics>> buckets, base_buckets;
  for (const auto& u : users) buckets[group_of(u.user)].push_back(u);
  for (const auto& u : baseline) base_buckets[group_of(u.user)].push_back(u);

  // Numeric groups in numeric order, "unknown" last.
  std::vector<std::string> order;
  for (const auto& [name, list] : buckets)
    if (name != "unknown") order.push_back(name);
  std::sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
    return std::stoul(a) < std::stoul(b);
  });
  if (buckets.count("unknown")) order.push_back("unknown");

  const auto gain = [](double v, double b) { return b != 0.0 ? (v - b) / b : 0.0; };
  GroupReport out;
  out.baseline_name = std::move(baseline_name);
  for (const auto& name : order) {
    GroupRow row;
    row.group = name;
    row.report = summarize(buckets[name], ks, entropy_k);
    auto it = base_buckets.find(name);
    if (it != base_buckets.end()) {
      const auto b = summarize(it->second, ks, entropy_k);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        row.recall_gain.push_back(gain(row.report.recall[i], b.recall[i]));
        row.ndcg_gain.push_back(gain(row.report.ndcg[i], b.ndcg[i]));
      }
      row.entropy_gain = gain(row.report.entropy, b.entropy);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace {

detail::Json report_json(const MetricReport& r) {
  detail::Json j;
  j["users"] = r.users;
  j["excluded"] = r.excluded;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    j["recall@" + std::to_string(r.ks[i])] = r.recall[i];
    j["ndcg@" + std::to_string(r.ks[i])] = r.ndcg[i];
  }
  j["entropy@" + std::to_string(r.entropy_k)] = r.entropy;
  return j;
}

std::string csv_header(const MetricReport& r, const char* first) {
  std::string s = first;
  s += ",users,excluded";
  for (auto k : r.ks) s += ",recall@" + std::to_string(k);
  for (auto k : r.ks) s += ",ndcg@" + std::to_string(k);
  s += ",entropy@" + std::to_string(r.entropy_k);
  return s;
}

std::string csv_row(const std::string& name, const MetricReport& r) {
  std::string s = name + "," + std::to_string(r.users) + "," + std::to_string(r.excluded);
  for (double v : r.recall) s += "," + fmt(v);
  for (double v : r.ndcg) s += "," + fmt(v);
  s += "," + fmt(r.entropy);
  return s;
}

}  // namespace

std::string report_to_json(const MetricReport& report,
                           const std::map<std::string, MetricReport>& slices,
                           const GroupReport* groups) {
  detail::Json j;
  j["overall"] = report_json(report);
  j["notes"] = {
      "recall@K divides hits by the number of distinct targets",
      "entropy@K uses n_j/K weights over multi-hot categories and may exceed log2(C)"};
  if (!slices.empty()) {
    detail::Json s;
    for (const auto& [name, r] : slices) s[name] = report_json(r);
    j["slices"] = std::move(s);
  }
  if (groups) {
    detail::Json g = detail::Json::array();
    for (const auto& row : groups->rows) {
      auto entry = report_json(row.report);
      entry["group"] = row.group;
      if (!row.recall_gain.empty()) {
        for (std::size_t i = 0; i < row.report.ks.size(); ++i) {
          entry["recall@" + std::to_string(row.report.ks[i]) + "_gain"] = row.recall_gain[i];
          entry["ndcg@" + std::to_string(row.report.ks[i]) + "_gain"] = row.ndcg_gain[i];
        }
        entry["entropy_gain"] = *row.entropy_gain;
      }
      g.push_back(std::move(entry));
    }
    j["groups"] = std::move(g);
    if (!groups->baseline_name.empty()) j["baseline"] = groups->baseline_name;
  }
  return j.dump(2);
}

std::string report_to_csv(const MetricReport& report,
                          const std::map<std::string, MetricReport>& slices) {
  std::string s = csv_header(report, "slice") + "\n" + csv_row("all", report) + "\n";
  for (const auto& [name, r] : slices) s += csv_row(name, r) + "\n";
  return s;
}

std::string group_report_to_csv(const GroupReport& report) {
  if (report.rows.empty()) return "group,users,excluded\n";
  const auto& first = report.rows.front().report;
  std::string s = csv_header(first, "group");
  const bool gains = std::any_of(report.rows.begin(), report.rows.end(),
                                 [](const GroupRow& r) { return !r.recall_gain.empty(); });
  if (gains) {
    for (auto k : first.ks) s += ",recall@" + std::to_string(k) + "_gain";
    for (auto k : first.ks) s += ",ndcg@" + std::to_string(k) + "_gain";
    s += ",entropy_gain";
  }
  s += "\n";
  for (const auto& row : report.rows) {
    s += csv_row(row.group, row.report);
    if (gains) {
      const std::size_t nk = first.ks.size();
      for (std::size_t i = 0; i < nk; ++i)
        s += "," + (row.recall_gain.empty() ? std::string() : fmt(row.recall_gain[i]));
      for (std::size_t i = 0; i < nk; ++i)
        s += "," + (row.ndcg_gain.empty() ? std::string() : fmt(row.ndcg_gain[i]));
      s += "," + (row.entropy_gain ? fmt(*row.entropy_gain) : std::string());
    }
    s += "\n";
  }
  return s;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

}  // namespace phead
