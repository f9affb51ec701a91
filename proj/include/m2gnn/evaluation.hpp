#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/interactions.hpp"
#include "m2gnn/model.hpp"

namespace m2gnn {

enum class UserGroup : std::uint8_t { ColdStart, Inactive, Active };
inline constexpr std::array<UserGroup, 3> kUserGroups{UserGroup::ColdStart, UserGroup::Inactive, UserGroup::Active};

inline std::string_view to_string(UserGroup g) {
  switch (g) {
    case UserGroup::ColdStart: return "cold_start";
    case UserGroup::Inactive: return "inactive";
    case UserGroup::Active: return "active";
  }
  return "?";
}

// Target-domain training interaction counts: 0 is cold-start, below `active_min`
// inactive, otherwise active.
struct GroupThresholds {
  std::size_t active_min = 10;
};

inline std::vector<UserGroup> segment_users(const InteractionIndex& train, GroupThresholds th = {}) {
  std::vector<UserGroup> g(train.users());
  for (Index u = 0; u < g.size(); ++u) {
    const auto n = train.count(u);
    g[u] = n == 0 ? UserGroup::ColdStart : n < th.active_min ? UserGroup::Inactive : UserGroup::Active;
  }
  return g;
}

inline std::size_t hits_in_top_k(std::span<const Index> ranked, std::span<const Index> truth_sorted, std::size_t k) {
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::binary_search(truth_sorted.begin(), truth_sorted.end(), ranked[i])) ++hits;
  }
  return hits;
}

// |top-k ∩ truth| / |truth|. `truth_sorted` must be sorted and non-empty.
inline double recall_at_k(std::span<const Index> ranked, std::span<const Index> truth_sorted, std::size_t k) {
  if (truth_sorted.empty()) throw ContractError("recall needs a non-empty ground truth");
  return static_cast<double>(hits_in_top_k(ranked, truth_sorted, k)) / static_cast<double>(truth_sorted.size());
}

inline double hit_at_k(std::span<const Index> ranked, std::span<const Index> truth_sorted, std::size_t k) {
  if (truth_sorted.empty()) throw ContractError("hit rate needs a non-empty ground truth");
  return hits_in_top_k(ranked, truth_sorted, k) > 0 ? 1.0 : 0.0;
}

// Top-k item indices by descending score, ties by ascending index; items in
// `excluded_sorted` are skipped.
inline std::vector<Index> top_k(std::span<const double> scores, std::span<const Index> excluded_sorted, std::size_t k) {
  std::vector<Index> cand;
  cand.reserve(scores.size());
  for (Index i = 0; i < scores.size(); ++i) {
    if (!std::binary_search(excluded_sorted.begin(), excluded_sorted.end(), i)) cand.push_back(i);
  }
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  k = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

struct MetricValues {
  double overall = 0.0;
  std::array<double, 3> group{};  // indexed by UserGroup

  friend bool operator==(const MetricValues&, const MetricValues&) = default;
};

struct EvalReport {
  std::string label;
  std::vector<std::size_t> ks;
  std::vector<MetricValues> recall;  // parallel to ks
  std::vector<MetricValues> hit;
  std::size_t users_evaluated = 0;
  std::array<std::size_t, 3> group_users{};

  double recall_at(std::size_t k) const { return recall.at(slot(k)).overall; }
  double hit_at(std::size_t k) const { return hit.at(slot(k)).overall; }
  double recall_at(std::size_t k, UserGroup g) const { return recall.at(slot(k)).group[static_cast<int>(g)]; }
  double hit_at(std::size_t k, UserGroup g) const { return hit.at(slot(k)).group[static_cast<int>(g)]; }

  std::size_t slot(std::size_t k) const {
    const auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw ContractError("report has no metrics at k=" + std::to_string(k));
    return static_cast<std::size_t>(it - ks.begin());
  }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One `key=value` record per line.
inline std::string to_key_values(const EvalReport& r) {
  std::ostringstream os;
  if (!r.label.empty()) os << "label=" << r.label << '\n';
  os << "users.evaluated=" << r.users_evaluated << '\n';
  for (auto g : kUserGroups) os << "users." << to_string(g) << '=' << r.group_users[static_cast<int>(g)] << '\n';
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    for (const auto& [name, values] : {std::pair{"recall", &r.recall}, std::pair{"hit", &r.hit}}) {
      const auto& m = (*values)[i];
      os << name << '@' << r.ks[i] << ".overall=" << format_real(m.overall) << '\n';
      for (auto g : kUserGroups) {
        os << name << '@' << r.ks[i] << '.' << to_string(g) << '=' << format_real(m.group[static_cast<int>(g)])
           << '\n';
      }
    }
  }
  return os.str();
}

// Flat key/value map of any `key=value` line document.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    const auto eq = line.find('=');
    if (line.empty() || eq == std::string_view::npos) continue;
    out[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  return out;
}

// Ranks the full catalog for every user with held-out items and averages the
// metrics over those users (macro average), overall and per group.
inline EvalReport evaluate_representations(const Tensor& user_reps, const Tensor& item_reps,
                                           const InteractionIndex& held_out, const InteractionIndex& train,
                                           bool exclude_train, std::vector<std::size_t> ks = {50, 100},
                                           GroupThresholds th = {}) {
  if (ks.empty()) throw ContractError("no cutoffs requested");
  const auto groups = segment_users(train, th);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  EvalReport rep;
  rep.ks = ks;
  rep.recall.assign(ks.size(), {});
  rep.hit.assign(ks.size(), {});
  std::vector<std::array<double, 3>> rsum(ks.size()), hsum(ks.size());
  std::vector<double> rall(ks.size(), 0.0), hall(ks.size(), 0.0);
  std::vector<double> scores(item_reps.rows());
  for (Index u = 0; u < held_out.users(); ++u) {
    const auto truth = held_out.items_of(u);
    if (truth.empty()) continue;
    for (Index i = 0; i < scores.size(); ++i) scores[i] = score(user_reps.row_span(u), item_reps.row_span(i));
    const auto ranked = top_k(scores, exclude_train ? train.items_of(u) : std::span<const Index>{}, kmax);
    const int g = static_cast<int>(groups[u]);
    ++rep.users_evaluated;
    ++rep.group_users[g];
    for (std::size_t s = 0; s < ks.size(); ++s) {
      const double r = recall_at_k(ranked, truth, ks[s]);
      const double h = hit_at_k(ranked, truth, ks[s]);
      rsum[s][g] += r;
      hsum[s][g] += h;
      rall[s] += r;
      hall[s] += h;
    }
  }
  for (std::size_t s = 0; s < ks.size(); ++s) {
    if (rep.users_evaluated) {
      rep.recall[s].overall = rall[s] / static_cast<double>(rep.users_evaluated);
      rep.hit[s].overall = hall[s] / static_cast<double>(rep.users_evaluated);
    }
    for (int g = 0; g < 3; ++g) {
      if (!rep.group_users[g]) continue;
      rep.recall[s].group[g] = rsum[s][g] / static_cast<double>(rep.group_users[g]);
      rep.hit[s].group[g] = hsum[s][g] / static_cast<double>(rep.group_users[g]);
    }
  }
  return rep;
}

// User representations computed on `threads` workers; each worker owns a
// disjoint block of rows, so the result does not depend on the thread count.
inline Tensor all_user_reps_parallel(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                                     unsigned threads) {
  if (threads <= 1) return all_user_reps(ctx, params, cfg);
  Tensor out(ctx.users(), cfg.dim);
  std::vector<std::thread> pool;
  const std::size_t n = ctx.users();
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t u = w * n / threads; u < (w + 1) * n / threads; ++u) {
        Tape t;
        ForwardPass fp(t, ctx, params, cfg);
        const Tensor& rep = t.value(fp.user_rep(static_cast<Index>(u)));
        std::copy(rep.data().begin(), rep.data().end(), out.row_span(u).begin());
      }
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

inline EvalReport evaluate(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                           const InteractionIndex& held_out, const InteractionIndex& train, bool exclude_train,
                           std::vector<std::size_t> ks = {50, 100}, unsigned threads = 1, GroupThresholds th = {}) {
  const Tensor users = all_user_reps_parallel(ctx, params, cfg, threads);
  const Tensor items = all_item_reps(ctx, params, cfg);
  auto rep = evaluate_representations(users, items, held_out, train, exclude_train, std::move(ks), th);
  rep.label = std::string(to_string(cfg.variant));
  return rep;
}

}  // namespace m2gnn
