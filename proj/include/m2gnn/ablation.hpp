#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "m2gnn/config.hpp"
#include "m2gnn/dataset.hpp"
#include "m2gnn/evaluation.hpp"
#include "m2gnn/training.hpp"

namespace m2gnn {

// One configuration to be trained from scratch on every seed.
struct AblationArm {
  std::string name;
  RunConfig config;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::size_t n = 0;

  double standard_error() const { return n ? stddev / std::sqrt(static_cast<double>(n)) : 0.0; }
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ArmResult {
  std::string name;
  std::vector<EvalReport> reports;  // one per seed, on the test split

  std::vector<double> values(const std::function<double(const EvalReport&)>& f) const {
    std::vector<double> out;
    for (const auto& r : reports) out.push_back(f(r));
    return out;
  }
  Summary recall(std::size_t k = 50) const {
    return summarize(values([k](const EvalReport& r) { return r.recall_at(k); }));
  }
  Summary recall(std::size_t k, UserGroup g) const {
    return summarize(values([k, g](const EvalReport& r) { return r.recall_at(k, g); }));
  }
  Summary hit(std::size_t k = 50) const {
    return summarize(values([k](const EvalReport& r) { return r.hit_at(k); }));
  }
};

inline std::vector<AblationArm> variant_arms(const RunConfig& base, std::span<const AggregatorVariant> variants) {
  std::vector<AblationArm> arms;
  for (auto v : variants) {
    AblationArm a{std::string(to_string(v)), base};
    a.config.model.variant = v;
    arms.push_back(std::move(a));
  }
  return arms;
}

// Trains one run and evaluates its best-by-validation parameters on the test split.
inline EvalReport train_and_test(const Dataset& ds, RunConfig cfg, std::uint64_t seed, unsigned threads = 1) {
  cfg.set_seed(seed);
  cfg.validate();
  ModelContext ctx(*ds.graph, ds.manifest.metapaths, cfg.model);
  auto init = ModelParams::initialize(ds.users(), ds.items(), ds.tags(), cfg.model, seed);
  const auto res = train(ctx, std::move(init), cfg.model, cfg.train, ds.train_index, &ds.validation_index);
  return evaluate(ctx, res.best, cfg.model, ds.test_index, ds.train_index, true, {50, 100}, threads);
}

// Every arm, trained from scratch on seeds base_seed .. base_seed + n_seeds - 1
// with identical data.
inline std::vector<ArmResult> run_ablation(const Dataset& ds, const std::vector<AblationArm>& arms, std::size_t n_seeds,
                                            std::uint64_t base_seed = 1, unsigned threads = 1,
                                            const std::function<void(const std::string&, std::uint64_t, const EvalReport&)>&
                                                on_run = {}) {
  std::vector<ArmResult> out;
  for (const auto& arm : arms) {
    ArmResult r{arm.name, {}};
    for (std::size_t s = 0; s < n_seeds; ++s) {
      auto rep = train_and_test(ds, arm.config, base_seed + s, threads);
      rep.label = arm.name;
      if (on_run) on_run(arm.name, base_seed + s, rep);
      r.reports.push_back(std::move(rep));
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string to_key_values(const std::vector<ArmResult>& results) {
  std::string s;
  for (const auto& r : results) {
    const auto rec = r.recall(50), hit = r.hit(50), rec100 = r.recall(100);
    s += "variant." + r.name + ".seeds=" + std::to_string(r.reports.size()) + '\n';
    s += "variant." + r.name + ".recall@50.mean=" + format_real(rec.mean) + '\n';
    s += "variant." + r.name + ".recall@50.stddev=" + format_real(rec.stddev) + '\n';
    s += "variant." + r.name + ".hit@50.mean=" + format_real(hit.mean) + '\n';
    s += "variant." + r.name + ".hit@50.stddev=" + format_real(hit.stddev) + '\n';
    s += "variant." + r.name + ".recall@100.mean=" + format_real(rec100.mean) + '\n';
    for (auto g : kUserGroups) {
      const auto gs = r.recall(50, g);
      s += "variant." + r.name + ".recall@50." + std::string(to_string(g)) + ".mean=" + format_real(gs.mean) + '\n';
    }
  }
  return s;
}

}  // namespace m2gnn
