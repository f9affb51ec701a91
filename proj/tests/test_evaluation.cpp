#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "m2gnn/ablation.hpp"
#include "m2gnn/evaluation.hpp"
#include "m2gnn/synthetic.hpp"

using namespace m2gnn;
using m2gnn::testing::Toy;
using m2gnn::testing::toy_config;

namespace {

// Brute-force reference: score everything, stable-sort, drop exclusions, count.
struct OracleMetrics {
  double recall = 0, hit = 0;
  std::array<double, 3> grecall{}, ghit{};
  std::array<std::size_t, 3> gusers{};
  std::size_t users = 0;
};

OracleMetrics oracle(const Tensor& U, const Tensor& I, const std::vector<std::vector<Index>>& truth,
                     const std::vector<std::vector<Index>>& train, std::size_t k) {
  OracleMetrics m;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    if (truth[u].empty()) continue;
    std::vector<std::pair<double, Index>> s;
    for (Index i = 0; i < I.rows(); ++i) {
      if (std::find(train[u].begin(), train[u].end(), i) != train[u].end()) continue;
      double v = 0;
      for (std::size_t c = 0; c < U.cols(); ++c) v += U(u, c) * I(i, c);
      s.push_back({-v, i});
    }
    std::sort(s.begin(), s.end());
    std::size_t h = 0;
    for (std::size_t r = 0; r < std::min(k, s.size()); ++r)
      h += std::find(truth[u].begin(), truth[u].end(), s[r].second) != truth[u].end();
    const double rec = static_cast<double>(h) / static_cast<double>(truth[u].size());
    const double hit = h > 0 ? 1.0 : 0.0;
    const std::size_t n = train[u].size();
    const int g = n == 0 ? 0 : n < 10 ? 1 : 2;
    m.recall += rec, m.hit += hit, ++m.users;
    m.grecall[g] += rec, m.ghit[g] += hit, ++m.gusers[g];
  }
  m.recall /= static_cast<double>(m.users);
  m.hit /= static_cast<double>(m.users);
  for (int g = 0; g < 3; ++g) {
    if (m.gusers[g]) m.grecall[g] /= static_cast<double>(m.gusers[g]), m.ghit[g] /= static_cast<double>(m.gusers[g]);
  }
  return m;
}

struct RandomInstance {
  Tensor users, items;
  Interactions train, test;
  std::vector<std::vector<Index>> train_lists, test_lists;

  // Scores are quantized so ties actually occur.
  RandomInstance(std::size_t n_users, std::size_t n_items, std::uint64_t seed) : users(n_users, 4), items(n_items, 4) {
    Rng rng(seed);
    for (auto& x : users.data()) x = static_cast<double>(rng.below(3));
    for (auto& x : items.data()) x = static_cast<double>(rng.below(3));
    train_lists.resize(n_users);
    test_lists.resize(n_users);
    for (Index u = 0; u < n_users; ++u) {
      const std::size_t n_train = u % 3 == 0 ? 0 : u % 3 == 1 ? 1 + rng.below(9) : 10 + rng.below(10);
      const std::size_t n_test = u % 7 == 6 ? 0 : 1 + rng.below(8);
      std::vector<Index> perm(n_items);
      std::iota(perm.begin(), perm.end(), Index{0});
      for (std::size_t i = n_items; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      for (std::size_t i = 0; i < n_train; ++i) train.push_back({u, perm[i]}), train_lists[u].push_back(perm[i]);
      for (std::size_t i = 0; i < n_test; ++i) {
        test.push_back({u, perm[n_train + i]});
        test_lists[u].push_back(perm[n_train + i]);
      }
    }
  }
};

}  // namespace

TEST(Metrics, Examples) {
  const std::vector<Index> ranked{4, 7, 1, 9};
  const std::vector<Index> a{7}, ab{2, 7}, none{3};
  EXPECT_EQ(recall_at_k(ranked, a, 50), 1.0);
  EXPECT_EQ(recall_at_k(ranked, ab, 50), 0.5);
  EXPECT_EQ(hit_at_k(ranked, ab, 50), 1.0);
  EXPECT_EQ(hit_at_k(ranked, none, 50), 0.0);
  EXPECT_EQ(recall_at_k(ranked, a, 1), 0.0);
  EXPECT_THROW(recall_at_k(ranked, {}, 5), ContractError);
  EXPECT_THROW(hit_at_k(ranked, {}, 5), ContractError);
}

TEST(Metrics, MonotoneInKAndHitDominatesRecall) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Index> ranked(30);
    std::iota(ranked.begin(), ranked.end(), Index{0});
    for (std::size_t i = 30; i > 1; --i) std::swap(ranked[i - 1], ranked[rng.below(i)]);
    std::vector<Index> truth;
    for (Index i = 0; i < 30; ++i)
      if (rng.uniform() < 0.2) truth.push_back(i);
    if (truth.empty()) truth.push_back(0);
    double pr = 0, ph = 0;
    for (std::size_t k = 1; k <= 30; ++k) {
      const double r = recall_at_k(ranked, truth, k), h = hit_at_k(ranked, truth, k);
      EXPECT_GE(r, pr);
      EXPECT_GE(h, ph);
      EXPECT_GE(h, r > 0 ? 1.0 : 0.0);
      pr = r, ph = h;
    }
    EXPECT_EQ(pr, 1.0);
  }
}

TEST(TopK, TiesByIndexExclusionAndClamp) {
  const std::vector<double> s{0.5, 0.9, 0.5, 0.9, 0.1};
  EXPECT_EQ(top_k(s, {}, 5), (std::vector<Index>{1, 3, 0, 2, 4}));
  const std::vector<Index> ex{1};
  EXPECT_EQ(top_k(s, ex, 2), (std::vector<Index>{3, 0}));
  EXPECT_EQ(top_k(s, ex, 100).size(), 4u);
}

TEST(Segment, Thresholds) {
  Interactions xs;
  for (Index i = 0; i < 9; ++i) xs.push_back({1, i});
  for (Index i = 0; i < 10; ++i) xs.push_back({2, i});
  const InteractionIndex idx(xs, 4, 20);
  const auto g = segment_users(idx);
  EXPECT_EQ(g, (std::vector<UserGroup>{UserGroup::ColdStart, UserGroup::Inactive, UserGroup::Active,
                                       UserGroup::ColdStart}));
  const auto g2 = segment_users(idx, {9});
  EXPECT_EQ(g2[1], UserGroup::Active);
}

TEST(Segment, CountsSumToUsers) {
  const auto ds = generate_synthetic(m2gnn::testing::gradient_toy_spec()).build();
  const auto g = segment_users(ds.train_index);
  std::array<std::size_t, 3> n{};
  for (auto x : g) ++n[static_cast<int>(x)];
  EXPECT_EQ(n[0] + n[1] + n[2], ds.users());
}

TEST(Evaluate, MatchesBruteForceOracle) {
  const RandomInstance inst(30, 200, 5);
  const InteractionIndex tr(inst.train, 30, 200), te(inst.test, 30, 200);
  const auto rep = evaluate_representations(inst.users, inst.items, te, tr, true, {50, 100});
  for (std::size_t k : {50u, 100u}) {
    const auto o = oracle(inst.users, inst.items, inst.test_lists, inst.train_lists, k);
    EXPECT_EQ(rep.users_evaluated, o.users);
    EXPECT_EQ(rep.recall_at(k), o.recall);
    EXPECT_EQ(rep.hit_at(k), o.hit);
    for (auto g : kUserGroups) {
      EXPECT_EQ(rep.recall_at(k, g), o.grecall[static_cast<int>(g)]);
      EXPECT_EQ(rep.hit_at(k, g), o.ghit[static_cast<int>(g)]);
      EXPECT_EQ(rep.group_users[static_cast<int>(g)], o.gusers[static_cast<int>(g)]);
    }
  }
}

TEST(Evaluate, WithoutExclusionMatchesOracle) {
  const RandomInstance inst(30, 200, 6);
  const InteractionIndex tr(inst.train, 30, 200), te(inst.test, 30, 200);
  const auto rep = evaluate_representations(inst.users, inst.items, te, tr, false, {50});
  const std::vector<std::vector<Index>> none(30);
  const auto o = oracle(inst.users, inst.items, inst.test_lists, none, 50);
  EXPECT_EQ(rep.recall_at(50), o.recall);
}

TEST(Evaluate, GroupsRecombineToOverall) {
  const RandomInstance inst(90, 300, 9);
  const InteractionIndex tr(inst.train, 90, 300), te(inst.test, 90, 300);
  const auto rep = evaluate_representations(inst.users, inst.items, te, tr, true, {50, 100});
  for (std::size_t k : {50u, 100u}) {
    double r = 0, h = 0;
    for (auto g : kUserGroups) {
      const auto n = static_cast<double>(rep.group_users[static_cast<int>(g)]);
      r += n * rep.recall_at(k, g);
      h += n * rep.hit_at(k, g);
    }
    EXPECT_NEAR(r / static_cast<double>(rep.users_evaluated), rep.recall_at(k), 1e-10);
    EXPECT_NEAR(h / static_cast<double>(rep.users_evaluated), rep.hit_at(k), 1e-10);
    EXPECT_GE(rep.recall_at(k), 0.0);
    EXPECT_LE(rep.recall_at(k), 1.0);
  }
}

TEST(Evaluate, PerfectScorerRecallsEverything) {
  // Item i is relevant to user u iff i % 5 == u; the score is that indicator.
  Tensor U(5, 5), I(100, 5);
  Interactions te;
  for (Index u = 0; u < 5; ++u) U(u, u) = 1;
  for (Index i = 0; i < 100; ++i) I(i, i % 5) = 1, te.push_back({static_cast<Index>(i % 5), i});
  const auto rep = evaluate_representations(U, I, InteractionIndex(te, 5, 100), InteractionIndex({}, 5, 100), true);
  EXPECT_EQ(rep.recall_at(50), 1.0);
  EXPECT_EQ(rep.hit_at(50), 1.0);
}

TEST(Evaluate, InvariantUnderScorePreservingRelabel) {
  const RandomInstance inst(30, 120, 11);
  std::vector<Index> perm(120);
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(2);
  for (std::size_t i = 120; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  // Distinct scores, so the relabeling cannot change tie order.
  Tensor items(120, 4), users = inst.users;
  for (auto& x : items.data()) x = rng.normal(0, 1);
  for (auto& x : users.data()) x = rng.normal(0, 1);
  Tensor pitems(120, 4);
  for (Index i = 0; i < 120; ++i)
    for (std::size_t c = 0; c < 4; ++c) pitems(perm[i], c) = items(i, c);
  auto relabel = [&](Interactions xs) {
    for (auto& x : xs) x.item = perm[x.item];
    return xs;
  };
  const auto a = evaluate_representations(users, items, InteractionIndex(inst.test, 30, 120),
                                          InteractionIndex(inst.train, 30, 120), true);
  const auto b = evaluate_representations(users, pitems, InteractionIndex(relabel(inst.test), 30, 120),
                                          InteractionIndex(relabel(inst.train), 30, 120), true);
  EXPECT_EQ(a, b);
}

// Random scores over 1000 items, |GT| = 10, k = 50: recall is a hypergeometric
// mean, 0.05 with per-user variance 50·(10/1000)(990/1000)(950/999)/100.
TEST(Evaluate, RandomScorerHasHypergeometricRecall) {
  const std::size_t users = 200, items = 1000;
  Rng rng(17);
  Tensor U(users, 1), I(items, 1);
  for (auto& x : U.data()) x = 1.0;
  Interactions te;
  std::vector<double> per_user;
  std::vector<double> scores(items);
  double total = 0;
  for (Index u = 0; u < users; ++u) {
    for (auto& s : scores) s = rng.uniform();
    std::vector<Index> perm(items);
    std::iota(perm.begin(), perm.end(), Index{0});
    for (std::size_t i = 0; i < 10; ++i) std::swap(perm[i], perm[i + rng.below(items - i)]);
    std::vector<Index> truth(perm.begin(), perm.begin() + 10);
    std::sort(truth.begin(), truth.end());
    total += recall_at_k(top_k(scores, {}, 50), truth, 50);
  }
  const double mean = total / users;
  const double var = 50.0 * 0.01 * 0.99 * (950.0 / 999.0) / 100.0;
  EXPECT_NEAR(mean, 0.05, 3 * std::sqrt(var / users));
}

TEST(Evaluate, ToyModelMatchesOracleOnRepresentations) {
  const Toy toy = Toy::make();
  const auto cfg = toy_config(AggregatorVariant::Full, 2);
  const ModelContext ctx(toy.graph, toy.schemas, cfg);
  const auto p = ModelParams::initialize(5, 6, 9, cfg, 4);
  const Interactions tr{{0, 0}, {0, 1}, {0, 3}, {1, 2}, {3, 5}};
  const Interactions te{{0, 2}, {1, 4}, {2, 0}, {2, 5}, {4, 1}};
  const auto rep = evaluate(ctx, p, cfg, InteractionIndex(te, 5, 6), InteractionIndex(tr, 5, 6), true, {2, 3}, 2);
  EXPECT_EQ(rep.label, "full");
  std::vector<std::vector<Index>> trl(5), tel(5);
  for (const auto& x : tr) trl[x.user].push_back(x.item);
  for (const auto& x : te) tel[x.user].push_back(x.item);
  const auto U = all_user_reps(ctx, p, cfg), I = all_item_reps(ctx, p, cfg);
  for (std::size_t k : {2u, 3u}) {
    const auto o = oracle(U, I, tel, trl, k);
    EXPECT_EQ(rep.recall_at(k), o.recall);
    EXPECT_EQ(rep.hit_at(k), o.hit);
  }
  EXPECT_EQ(rep, evaluate(ctx, p, cfg, InteractionIndex(te, 5, 6), InteractionIndex(tr, 5, 6), true, {2, 3}, 1));
}

TEST(Report, KeyValueRoundTrip) {
  const RandomInstance inst(30, 200, 5);
  auto rep = evaluate_representations(inst.users, inst.items, InteractionIndex(inst.test, 30, 200),
                                      InteractionIndex(inst.train, 30, 200), true);
  rep.label = "full";
  const auto kv = parse_key_values(to_key_values(rep));
  EXPECT_EQ(kv.at("label"), "full");
  EXPECT_EQ(std::stoul(kv.at("users.evaluated")), rep.users_evaluated);
  EXPECT_EQ(std::stod(kv.at("recall@50.overall")), rep.recall_at(50));
  EXPECT_EQ(std::stod(kv.at("hit@100.active")), rep.hit_at(100, UserGroup::Active));
  EXPECT_EQ(std::stod(kv.at("recall@100.cold_start")), rep.recall_at(100, UserGroup::ColdStart));
  EXPECT_THROW(rep.recall_at(20), ContractError);
}

// --- ablation plumbing ------------------------------------------------------

TEST(Ablation, SummaryStatistics) {
  const auto s = summarize({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(5.0 / 3.0));
  EXPECT_DOUBLE_EQ(s.standard_error(), std::sqrt(5.0 / 3.0) / 2.0);
  EXPECT_EQ(summarize({7}).stddev, 0.0);
  EXPECT_EQ(summarize({}).n, 0u);
}

TEST(Ablation, VariantArmsDifferOnlyInVariant) {
  RunConfig base;
  base.model.dim = 12;
  const std::vector<AggregatorVariant> vs{AggregatorVariant::Full, AggregatorVariant::Mean, AggregatorVariant::Hard};
  const auto arms = variant_arms(base, vs);
  ASSERT_EQ(arms.size(), 3u);
  EXPECT_EQ(arms[1].name, "mean");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(arms[i].config.model.variant, vs[i]);
    EXPECT_EQ(arms[i].config.model.dim, 12u);
  }
}

TEST(Ablation, RunsEveryArmOnEverySeed) {
  const auto ds = generate_synthetic(m2gnn::testing::gradient_toy_spec()).build();
  RunConfig base;
  base.model.dim = 4;
  base.train.epochs = 1;
  base.train.batch_size = 64;
  const std::vector<AggregatorVariant> vs{AggregatorVariant::Full, AggregatorVariant::Mean};
  std::size_t calls = 0;
  const auto res = run_ablation(ds, variant_arms(base, vs), 2, 5, 1,
                                [&](const std::string&, std::uint64_t, const EvalReport&) { ++calls; });
  EXPECT_EQ(calls, 4u);
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[0].reports.size(), 2u);
  EXPECT_EQ(res[0].reports[0], train_and_test(ds, variant_arms(base, vs)[0].config, 5));
  const auto kv = parse_key_values(to_key_values(res));
  EXPECT_EQ(kv.at("variant.mean.seeds"), "2");
  EXPECT_EQ(std::stod(kv.at("variant.full.recall@50.mean")), res[0].recall(50).mean);
}

// With one capsule and gamma = 0 the full aggregator reduces to the mean one up
// to the per-metapath squash length: capsules are parallel to the mean vectors.
TEST(Ablation, SingleCapsuleFullIsParallelToMean) {
  const Toy toy = Toy::make();
  auto full = toy_config(AggregatorVariant::Full, 1, 0.0);
  full.k_max = 1;
  auto mean = full;
  mean.variant = AggregatorVariant::Mean;
  const auto p = ModelParams::initialize(5, 6, 9, full, 4);
  const ModelContext cf(toy.graph, toy.schemas, full), cm(toy.graph, toy.schemas, mean);
  for (Index u : {0u, 1u}) {
    const auto a = forward_user(cf, p, full, u), b = forward_user(cm, p, mean, u);
    ASSERT_EQ(a.capsules.size(), b.capsules.size());
    for (std::size_t c = 0; c < a.capsules.size(); ++c) {
      const auto x = a.capsules[c].capsules.row_span(0), y = b.capsules[c].capsules.row_span(0);
      const double cos = dot(x, y) / std::sqrt(squared_norm(x) * squared_norm(y));
      EXPECT_NEAR(cos, 1.0, 1e-12);
    }
  }
}

TEST(Ablation, HardWeightsAreOneHot) {
  const Toy toy = Toy::make();
  const auto cfg = toy_config(AggregatorVariant::Hard, 2);
  const ModelContext ctx(toy.graph, toy.schemas, cfg);
  const auto p = ModelParams::initialize(5, 6, 9, cfg, 4);
  for (Index u = 0; u < 4; ++u) {
    for (const auto& aw : forward_user(ctx, p, cfg, u).attention) {
      std::size_t ones = 0;
      for (double w : aw.weights.data()) {
        EXPECT_TRUE(w == 0.0 || w == 1.0);
        ones += w == 1.0;
      }
      EXPECT_EQ(ones, 1u);
    }
  }
}
