#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "m2gnn/adam.hpp"
#include "m2gnn/error.hpp"
#include "m2gnn/evaluation.hpp"
#include "m2gnn/interactions.hpp"
#include "m2gnn/model.hpp"
#include "m2gnn/rng.hpp"
#include "m2gnn/tape.hpp"

namespace m2gnn {

struct BprTriple {
  Index user = 0;
  Index positive = 0;
  Index negative = 0;
};

struct SkipGramPair {
  Index center = 0;
  Index positive = 0;
  Index negative = 0;
};

// Literal keeps the subtracted log-sigmoid of the negative pair (unbounded below);
// Stabilized uses log sigmoid(-x) for the negative, the usual negative-sampling form.
enum class SkipgramForm : std::uint8_t { Literal, Stabilized };

inline std::string_view to_string(SkipgramForm f) { return f == SkipgramForm::Literal ? "literal" : "stabilized"; }

inline SkipgramForm parse_skipgram_form(std::string_view s) {
  if (s == "literal") return SkipgramForm::Literal;
  if (s == "stabilized") return SkipgramForm::Stabilized;
  throw ValidationError("unknown skipgram form '" + std::string(s) + "'");
}

struct TrainConfig {
  std::size_t batch_size = 1024;
  int epochs = 20;
  double learning_rate = 5e-3;
  std::uint64_t seed = 0;
  SkipgramForm skipgram_form = SkipgramForm::Stabilized;
  bool use_skipgram = true;
  std::size_t negative_retries = 50;
  std::size_t validation_k = 50;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
    if (negative_retries < 1) throw ValidationError("negative retries must be >= 1");
  }
};

struct SampledBatch {
  std::vector<BprTriple> triples;
  std::size_t skipped = 0;  // positives whose negative draw hit the retry bound
};

// Attaches an unobserved negative to each (user, positive) pair; a pair whose
// retries run out is dropped and counted.
inline SampledBatch attach_negatives(std::span<const Interaction> positives, const InteractionIndex& observed,
                                     Rng& rng, std::size_t retries = 50) {
  SampledBatch out;
  const std::size_t items = observed.items();
  for (const auto& p : positives) {
    bool found = false;
    for (std::size_t r = 0; r < retries && items > 0; ++r) {
      const auto cand = static_cast<Index>(rng.below(items));
      if (!observed.contains(p.user, cand)) {
        out.triples.push_back({p.user, p.item, cand});
        found = true;
        break;
      }
    }
    if (!found) ++out.skipped;
  }
  return out;
}

// n triples with positives drawn uniformly (with replacement) from the observed pairs.
inline SampledBatch sample_bpr_batch(const InteractionIndex& observed, std::size_t n, std::uint64_t seed,
                                     std::size_t retries = 50) {
  const auto& pairs = observed.pairs();
  if (pairs.empty()) throw ContractError("no observed interactions to sample from");
  Rng rng(derive_seed({seed, 0xb9bULL}));
  std::vector<Interaction> pos(n);
  for (auto& p : pos) p = pairs[rng.below(pairs.size())];
  return attach_negatives(pos, observed, rng, retries);
}

// n pairs: (center, positive) uniform over stored tag-tag adjacency entries, negative
// uniform over tags that are neither the center nor its neighbors.
inline std::vector<SkipGramPair> sample_skipgram_pairs(const HeteroGraph& graph, std::size_t n, Rng& rng,
                                                       std::size_t retries = 50) {
  const auto tt = EdgeType::tag_tag();
  const std::size_t tags = graph.node_count(NodeType::tag());
  std::vector<Index> centers;
  for (Index t = 0; t < tags; ++t)
    for (std::size_t k = 0; k < graph.degree({NodeType::tag(), t}, tt); ++k) centers.push_back(t);
  std::vector<SkipGramPair> out;
  if (centers.empty()) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t e = rng.below(centers.size());
    const Index c = centers[e];
    const auto nb = graph.neighbors({NodeType::tag(), c}, tt);
    // entries of one center are contiguous, so the offset within them picks the neighbor
    const std::size_t first = static_cast<std::size_t>(std::lower_bound(centers.begin(), centers.end(), c) - centers.begin());
    const Index pos = nb[e - first];
    for (std::size_t r = 0; r < retries; ++r) {
      const auto cand = static_cast<Index>(rng.below(tags));
      if (cand != c && !std::binary_search(nb.begin(), nb.end(), cand)) {
        out.push_back({c, pos, cand});
        break;
      }
    }
  }
  return out;
}

// ---- loss terms on a tape ------------------------------------------------

// -(1/n) sum ln sigma(y+ - y-) over rows.
inline Var bpr_term(Tape& t, Var users, Var positives, Var negatives) {
  const double n = static_cast<double>(t.value(users).rows());
  Var margin = t.sub(t.rows_dot(users, positives), t.rows_dot(users, negatives));
  return t.scale(t.sum(t.log_sigmoid(margin)), -1.0 / n);
}

inline Var skipgram_term(Tape& t, Var centers, Var pos_ctx, Var neg_ctx, SkipgramForm form) {
  const double n = static_cast<double>(t.value(centers).rows());
  Var lp = t.log_sigmoid(t.rows_dot(pos_ctx, centers));
  Var xn = t.rows_dot(neg_ctx, centers);
  Var inner = form == SkipgramForm::Literal ? t.sub(lp, t.log_sigmoid(xn)) : t.add(lp, t.log_sigmoid(t.scale(xn, -1.0)));
  return t.scale(t.sum(inner), -1.0 / n);
}

// Skip-gram loss of e0_t against the context table V.
inline double skipgram_loss(const ModelParams& params, std::span<const SkipGramPair> pairs, SkipgramForm form) {
  if (pairs.empty()) return 0.0;
  Tape t;
  std::vector<std::size_t> c, p, n;
  for (const auto& s : pairs) c.push_back(s.center), p.push_back(s.positive), n.push_back(s.negative);
  Var tags = t.parameter(params.tag, nullptr);
  Var ctx = t.parameter(params.V, nullptr);
  return t.value(skipgram_term(t, t.gather_rows(tags, c), t.gather_rows(ctx, p), t.gather_rows(ctx, n), form))[0];
}

// BPR loss from precomputed representations plus lambda * `squared_norm_theta`.
inline double bpr_loss(std::span<const BprTriple> triples, const Tensor& user_reps, const Tensor& item_reps,
                       double lambda, double squared_norm_theta) {
  if (triples.empty()) return lambda * squared_norm_theta;
  Tape t;
  std::vector<std::size_t> u, p, n;
  for (const auto& x : triples) u.push_back(x.user), p.push_back(x.positive), n.push_back(x.negative);
  Var ur = t.constant(user_reps);
  Var ir = t.constant(item_reps);
  return t.value(bpr_term(t, t.gather_rows(ur, u), t.gather_rows(ir, p), t.gather_rows(ir, n)))[0] +
         lambda * squared_norm_theta;
}

inline double joint_loss(double skipgram, double bpr) {
  if (!std::isfinite(skipgram) || !std::isfinite(bpr)) {
    throw NumericError("non-finite loss (skip-gram " + format_real(skipgram) + ", bpr " + format_real(bpr) + ")");
  }
  return skipgram + bpr;
}

// Rows of each table that a batch reads, i.e. the scope of lazy L2 regularization.
struct TouchedRows {
  std::vector<std::size_t> users, items, tags, contexts;
  bool routing = false;    // S
  bool attention = false;  // S1, S2
};

inline std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline TouchedRows touched_rows(const ModelContext& ctx, const ModelConfig& cfg, std::span<const BprTriple> triples,
                                std::span<const SkipGramPair> pairs) {
  TouchedRows t;
  std::vector<std::size_t> direct;
  for (const auto& x : triples) {
    t.users.push_back(x.user);
    t.items.push_back(x.positive);
    t.items.push_back(x.negative);
  }
  t.users = sorted_unique(std::move(t.users));
  t.items = sorted_unique(std::move(t.items));
  bool any_user_tags = false;
  if (cfg.layers > 0) {
    for (auto u : t.users)
      for (const auto& s : ctx.schemas()) {
        const auto& tags = ctx.user_tags(static_cast<Index>(u), s.id());
        any_user_tags = any_user_tags || !tags.empty();
        direct.insert(direct.end(), tags.begin(), tags.end());
      }
    const auto& im = *ctx.item_tag_mean();
    for (auto r : t.items)
      for (std::size_t k = im.offsets[r]; k < im.offsets[r + 1]; ++k) direct.push_back(im.index[k]);
  }
  // Layer l reads e^l at `direct`; pull those reads back through l tag-tag steps.
  std::vector<std::size_t> frontier = sorted_unique(direct);
  std::vector<std::size_t> all = frontier;
  const auto& tm = *ctx.tag_mean();
  for (int l = 1; l < cfg.layers; ++l) {
    std::vector<std::size_t> next;
    for (auto row : frontier)
      for (std::size_t k = tm.offsets[row]; k < tm.offsets[row + 1]; ++k) next.push_back(tm.index[k]);
    frontier = sorted_unique(std::move(next));
    all.insert(all.end(), frontier.begin(), frontier.end());
  }
  for (const auto& p : pairs) {
    all.push_back(p.center);
    t.contexts.push_back(p.positive);
    t.contexts.push_back(p.negative);
  }
  t.tags = sorted_unique(std::move(all));
  t.contexts = sorted_unique(std::move(t.contexts));
  t.routing = any_user_tags;
  t.attention = any_user_tags && (cfg.variant == AggregatorVariant::Full || cfg.variant == AggregatorVariant::Softmax);
  return t;
}

struct BatchObjective {
  double total = 0.0;
  double bpr = 0.0;       // ranking term without L2
  double skipgram = 0.0;  // L1
  double l2 = 0.0;        // lambda * ||Theta_touched||^2
};

// Joint loss L1 + L2 of one batch; when `grads` is non-null the gradient is added to it.
inline BatchObjective batch_objective(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                                      const TrainConfig& tc, std::span<const BprTriple> triples,
                                      std::span<const SkipGramPair> pairs, ModelParams* grads) {
  Tape t;
  ForwardPass fp(t, ctx, params, cfg, grads);
  BatchObjective obj;
  std::vector<Var> terms;

  if (!triples.empty()) {
    std::vector<Index> users;
    for (const auto& x : triples) users.push_back(x.user);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    std::vector<Var> reps;
    for (Index u : users) reps.push_back(fp.user_rep(u));
    Var unique_reps = t.concat_rows(reps);
    std::vector<std::size_t> slot;
    std::vector<Index> pos, neg;
    for (const auto& x : triples) {
      slot.push_back(static_cast<std::size_t>(std::lower_bound(users.begin(), users.end(), x.user) - users.begin()));
      pos.push_back(x.positive);
      neg.push_back(x.negative);
    }
    Var term = bpr_term(t, t.gather_rows(unique_reps, std::move(slot)), fp.item_reps(pos), fp.item_reps(neg));
    obj.bpr = t.value(term)[0];
    terms.push_back(term);
  }

  if (tc.use_skipgram && !pairs.empty()) {
    std::vector<std::size_t> c, p, n;
    for (const auto& s : pairs) c.push_back(s.center), p.push_back(s.positive), n.push_back(s.negative);
    Var term = skipgram_term(t, t.gather_rows(fp.tag_table(), std::move(c)),
                             t.gather_rows(fp.context_table(), std::move(p)),
                             t.gather_rows(fp.context_table(), std::move(n)), tc.skipgram_form);
    obj.skipgram = t.value(term)[0];
    terms.push_back(term);
  }

  if (cfg.lambda > 0.0) {
    const auto touched = touched_rows(ctx, cfg, triples, tc.use_skipgram ? pairs : std::span<const SkipGramPair>{});
    std::vector<Var> sq;
    auto rows = [&](Var table, const std::vector<std::size_t>& r) {
      if (!r.empty()) sq.push_back(t.sum_squares(t.gather_rows(table, r)));
    };
    rows(fp.user_table(), touched.users);
    rows(fp.item_table(), touched.items);
    rows(fp.tag_table(), touched.tags);
    rows(fp.context_table(), touched.contexts);
    if (touched.routing) sq.push_back(t.sum_squares(fp.routing_transform()));
    if (touched.attention) {
      sq.push_back(t.sum_squares(fp.attention_transform()));
      sq.push_back(t.sum_squares(fp.attention_vector()));
    }
    if (!sq.empty()) {
      Var acc = sq[0];
      for (std::size_t i = 1; i < sq.size(); ++i) acc = t.add(acc, sq[i]);
      Var term = t.scale(acc, cfg.lambda);
      obj.l2 = t.value(term)[0];
      terms.push_back(term);
    }
  }

  if (terms.empty()) return obj;
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = t.add(total, terms[i]);
  obj.total = joint_loss(obj.skipgram, obj.bpr + obj.l2);
  if (grads) t.backward(total);
  return obj;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double bpr = 0.0;
  double skipgram = 0.0;
  double l2 = 0.0;
  double validation_recall = std::numeric_limits<double>::quiet_NaN();
  std::size_t skipped = 0;
};

struct TrainResult {
  ModelParams best;
  ModelParams last;
  int best_epoch = -1;
  double best_validation = -1.0;
  std::vector<EpochLog> log;
};

// Thrown when a batch produces a non-finite loss or gradient.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, ModelParams last_good, std::vector<EpochLog> log)
      : NumericError(what), last_good(std::move(last_good)), log(std::move(log)) {}
  ModelParams last_good;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&, const ModelParams& current, bool improved)>;

// Adam over shuffled mini-batches of the observed training pairs. Best parameters
// by validation Recall@k are retained (the last epoch when there is no validation data).
inline TrainResult train(const ModelContext& ctx, ModelParams params, const ModelConfig& cfg, const TrainConfig& tc,
                         const InteractionIndex& train_set, const InteractionIndex* validation = nullptr,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  AdamState adam;
  adam.learning_rate = tc.learning_rate;
  TrainResult res;
  res.best = params;
  auto targets = params.families();
  std::vector<Tensor*> target_vec(targets.begin(), targets.end());
  ModelParams grads = params.zeros_like();
  auto gfam = grads.families();
  std::vector<const Tensor*> grad_vec(gfam.begin(), gfam.end());

  std::vector<Interaction> order = train_set.pairs();
  const bool has_validation = validation && !validation->pairs().empty();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(derive_seed({tc.seed, 0xe90cULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      auto batch = attach_negatives(std::span(order).subspan(start, end - start), train_set, rng, tc.negative_retries);
      log.skipped += batch.skipped;
      const auto pairs = tc.use_skipgram ? sample_skipgram_pairs(ctx.graph(), end - start, rng, tc.negative_retries)
                                         : std::vector<SkipGramPair>{};
      for (Tensor* g : gfam) g->fill(0.0);
      BatchObjective obj;
      try {
        obj = batch_objective(ctx, params, cfg, tc, batch.triples, pairs, &grads);
      } catch (const NumericError& e) {
        throw TrainingAborted(e.what(), res.best, res.log);
      }
      if (!grads.all_finite()) throw TrainingAborted("non-finite gradient", res.best, res.log);
      adam_step(adam, target_vec, grad_vec);
      log.loss += obj.total;
      log.bpr += obj.bpr;
      log.skipgram += obj.skipgram;
      log.l2 += obj.l2;
      ++batches;
    }
    if (batches) {
      const double b = static_cast<double>(batches);
      log.loss /= b, log.bpr /= b, log.skipgram /= b, log.l2 /= b;
    }
    bool improved = false;
    if (has_validation) {
      const auto rep = evaluate(ctx, params, cfg, *validation, train_set, true, {tc.validation_k});
      log.validation_recall = rep.recall_at(tc.validation_k);
      if (log.validation_recall > res.best_validation) {
        res.best_validation = log.validation_recall;
        improved = true;
      }
    } else {
      improved = true;
    }
    if (improved) {
      res.best = params;
      res.best_epoch = epoch;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log, params, improved);
  }
  res.last = std::move(params);
  return res;
}

}  // namespace m2gnn
