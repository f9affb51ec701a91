#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "m2gnn/model.hpp"
#include "m2gnn/rng.hpp"
#include "m2gnn/training.hpp"

namespace m2gnn {

struct GradCheckEntry {
  std::string family;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;

  bool pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
  }
  const GradCheckEntry& at(std::string_view family) const {
    for (const auto& e : entries)
      if (e.family == family) return e;
    throw ContractError("no grad-check entry for " + std::string(family));
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

using LossFunction = std::function<double(const ModelParams&)>;

// Compares `analytic` against central differences of `loss` at `at`. Per family, up to
// `per_family` coordinates with non-zero analytic gradient are sampled, plus a
// quarter as many drawn from the whole tensor (covering zero-gradient entries).
inline GradCheckReport grad_check(const ModelParams& at, const LossFunction& loss, const ModelParams& analytic,
                                  double tolerance, std::size_t per_family = 24, std::uint64_t seed = 0,
                                  double step = 1e-5) {
  GradCheckReport rep;
  rep.tolerance = tolerance;
  ModelParams probe = at;
  auto pf = probe.families();
  const auto af = analytic.families();
  Rng rng(derive_seed({seed, 0x9c4ULL}));
  for (std::size_t f = 0; f < pf.size(); ++f) {
    Tensor& p = *pf[f];
    const Tensor& g = *af[f];
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g[i] != 0.0) nonzero.push_back(i);
    for (std::size_t i = nonzero.size(); i > 1; --i) std::swap(nonzero[i - 1], nonzero[rng.below(i)]);
    if (nonzero.size() > per_family) nonzero.resize(per_family);
    std::vector<std::size_t> coords = nonzero;
    if (p.size() > 0)
      for (std::size_t i = 0; i < std::max<std::size_t>(1, per_family / 4); ++i) coords.push_back(rng.below(p.size()));
    GradCheckEntry e;
    e.family = std::string(ModelParams::kNames[f]);
    for (std::size_t i : coords) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = loss(probe);
      p[i] = orig - step;
      const double down = loss(probe);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(g[i], numeric));
      e.max_abs_analytic = std::max(e.max_abs_analytic, std::abs(g[i]));
      ++e.coordinates;
    }
    e.pass = e.max_rel_error < tolerance;
    rep.entries.push_back(e);
  }
  return rep;
}

// Gradient check of the joint training objective on a fixed batch.
inline GradCheckReport grad_check(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                                  const TrainConfig& tc, std::span<const BprTriple> triples,
                                  std::span<const SkipGramPair> pairs, double tolerance,
                                  std::size_t per_family = 24, std::uint64_t seed = 0) {
  ModelParams grads = params.zeros_like();
  batch_objective(ctx, params, cfg, tc, triples, pairs, &grads);
  auto loss = [&](const ModelParams& p) { return batch_objective(ctx, p, cfg, tc, triples, pairs, nullptr).total; };
  return grad_check(params, loss, grads, tolerance, per_family, seed);
}

}  // namespace m2gnn
