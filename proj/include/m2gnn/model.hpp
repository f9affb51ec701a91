#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/hetero_graph.hpp"
#include "m2gnn/rng.hpp"
#include "m2gnn/tape.hpp"
#include "m2gnn/tensor.hpp"

namespace m2gnn {

// How tags are pooled into a user vector. Full is capsule routing followed by
// pow-softmax attention; the others replace both steps for ablation.
enum class AggregatorVariant : std::uint8_t { Full, Mean, Softmax, Hard };

inline std::string_view to_string(AggregatorVariant v) {
  switch (v) {
    case AggregatorVariant::Full: return "full";
    case AggregatorVariant::Mean: return "mean";
    case AggregatorVariant::Softmax: return "softmax";
    case AggregatorVariant::Hard: return "hard";
  }
  return "?";
}

inline AggregatorVariant parse_variant(std::string_view s) {
  if (s == "full") return AggregatorVariant::Full;
  if (s == "mean") return AggregatorVariant::Mean;
  if (s == "softmax") return AggregatorVariant::Softmax;
  if (s == "hard") return AggregatorVariant::Hard;
  throw ValidationError("unknown aggregator variant '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t dim = 64;
  int layers = 2;
  std::size_t k_max = 4;
  double gamma = 6.0;
  int routing_iters = 3;
  std::size_t neighbor_cap = 128;
  bool pad_mask = true;
  double lambda = 1e-4;
  AggregatorVariant variant = AggregatorVariant::Full;
  std::uint64_t seed = 0;  // routing-logit init and neighbor sampling
  double init_scale = 0.1;
  double attention_init_scale = 1.0;

  void validate() const {
    if (dim == 0) throw ValidationError("dim must be >= 1");
    if (layers < 0) throw ValidationError("layers must be >= 0");
    if (k_max < 1) throw ValidationError("k_max must be >= 1");
    if (routing_iters < 1) throw ValidationError("routing_iters must be >= 1");
    if (neighbor_cap < 1) throw ValidationError("neighbor_cap must be >= 1");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("gamma must be >= 0");
    // Negative attention logits raised to a fractional power are undefined.
    if (gamma != std::floor(gamma)) throw ValidationError("gamma must be a whole number");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (!(init_scale > 0.0) || !(attention_init_scale > 0.0)) throw ValidationError("init scales must be > 0");
  }
};

// Every trainable tensor. Embedding tables are row-per-entity.
struct ModelParams {
  Tensor user;  // |U| x d
  Tensor item;  // |R| x d
  Tensor tag;   // |T| x d
  Tensor S;     // d x d routing transform
  Tensor S1;    // d x d attention transform
  Tensor S2;    // d x 1 attention vector
  Tensor V;     // |T| x d skip-gram context table

  static constexpr std::array<std::string_view, 7> kNames{"user_emb", "item_emb", "tag_emb", "S",
                                                          "S1",       "S2",       "V"};

  std::array<Tensor*, 7> families() { return {&user, &item, &tag, &S, &S1, &S2, &V}; }
  std::array<const Tensor*, 7> families() const { return {&user, &item, &tag, &S, &S1, &S2, &V}; }

  std::size_t dim() const { return S.rows(); }

  // Same shapes, all zero. Used as a gradient accumulator.
  ModelParams zeros_like() const {
    ModelParams z;
    auto dst = z.families();
    auto src = families();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = Tensor(src[i]->rows(), src[i]->cols());
    return z;
  }

  bool all_finite() const {
    for (const Tensor* t : families())
      if (!t->all_finite()) return false;
    return true;
  }

  static ModelParams initialize(std::size_t users, std::size_t items, std::size_t tags, const ModelConfig& cfg,
                                std::uint64_t seed) {
    const std::size_t d = cfg.dim;
    Rng rng(derive_seed({seed, 0x1a17ULL}));
    auto normal = [&](std::size_t r, std::size_t c, double sd) {
      Tensor t(r, c);
      for (auto& x : t.data()) x = rng.normal(0.0, sd);
      return t;
    };
    const double unit = 1.0 / std::sqrt(static_cast<double>(d));
    ModelParams p;
    p.user = normal(users, d, cfg.init_scale);
    p.item = normal(items, d, cfg.init_scale);
    p.tag = normal(tags, d, cfg.init_scale);
    p.S = normal(d, d, unit);
    for (std::size_t i = 0; i < d; ++i) p.S(i, i) += 1.0;
    p.S1 = normal(d, d, cfg.attention_init_scale * unit);
    p.S2 = normal(d, 1, cfg.attention_init_scale);
    p.V = normal(tags, d, cfg.init_scale);
    return p;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// K = max(1, min(K_max, ceil(log2 n))).
inline std::size_t adaptive_capsule_count(std::size_t n_tags, std::size_t k_max) {
  if (k_max < 1) throw ContractError("k_max must be >= 1");
  if (n_tags <= 1) return 1;
  std::size_t ceil_log2 = 0;
  while ((std::size_t{1} << ceil_log2) < n_tags) ++ceil_log2;
  return std::max<std::size_t>(1, std::min(k_max, ceil_log2));
}

inline Tensor squash(const Tensor& c) {
  Tape t;
  return t.value(t.squash_rows(t.constant(c)));
}

inline double score(std::span<const double> user, std::span<const double> item) { return dot(user, item); }

// Initial routing logits for one (user, metapath, layer), uniform in [-0.01, 0.01].
inline Tensor routing_logit_init(std::size_t n_tags, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Tensor b(n_tags, k);
  for (auto& x : b.data()) x = rng.uniform(-0.01, 0.01);
  return b;
}

inline std::uint64_t routing_seed(std::uint64_t global, Index user, int metapath, int layer) {
  return derive_seed({global, 0x7007ULL, user, static_cast<std::uint64_t>(metapath),
                      static_cast<std::uint64_t>(layer)});
}

struct RoutingVars {
  Var capsules;  // K x d, squashed
  Var weights;   // n x K, softmax of the logits used in the last round
  Var logits;    // n x K, after the last update
};

// Capsule routing over already-transformed tag vectors (row t = (S e_t)^T).
// Gradients flow through every unrolled round; b0 is a constant.
inline RoutingVars route(Tape& tape, Var transformed, std::size_t k, int iters, const Tensor& b0) {
  const Tensor& u = tape.value(transformed);
  if (k == 0) throw ContractError("routing needs at least one capsule");
  if (u.rows() == 0) throw ContractError("routing needs at least one tag");
  if (iters < 1) throw ContractError("routing needs at least one iteration");
  if (b0.rows() != u.rows() || b0.cols() != k) throw ContractError("routing logit init has wrong shape");
  Var b = tape.constant(b0);
  Var w, z;
  for (int it = 0; it < iters; ++it) {
    w = tape.softmax_rows(b);
    z = tape.squash_rows(tape.matmul(w, transformed, true, false));
    b = tape.add(b, tape.matmul(transformed, z, false, true));
  }
  return {z, w, b};
}

struct AttentionVars {
  Var logits;   // 1 x M, H = S2^T tanh(S1 Z)
  Var weights;  // 1 x M
  Var pooled;   // 1 x d
};

// Self-attention over capsule rows Z (M x d). Logits are raised to gamma before the
// softmax. With pad_mask, inactive rows are excluded and get weight 0; otherwise
// they take part as zero vectors.
inline AttentionVars attend(Tape& tape, Var z, Var s1, Var s2, double gamma, const std::vector<std::uint8_t>& active,
                            bool pad_mask) {
  const std::size_t m = tape.value(z).rows();
  if (active.size() != m) throw ContractError("attention mask size mismatch");
  Var h = tape.matmul(s2, tape.tanh(tape.matmul(z, s1, false, true)), true, true);
  const bool any = std::any_of(active.begin(), active.end(), [](auto a) { return a != 0; });
  if (!any) {
    Var zero_w = tape.constant(Tensor(1, m));
    return {h, zero_w, tape.constant(Tensor(1, tape.value(z).cols()))};
  }
  Var w = tape.softmax_rows(tape.pow(h, gamma), pad_mask ? active : std::vector<std::uint8_t>{});
  return {h, w, tape.matmul(w, z)};
}

// Graph-derived structure shared by every forward pass: aggregation matrices and
// each user's (capped, sampled) metapath neighbor sets.
class ModelContext {
 public:
  ModelContext(const HeteroGraph& graph, std::vector<MetapathSchema> schemas, const ModelConfig& cfg)
      : graph_(&graph), schemas_(std::move(schemas)) {
    validate_schemas(schemas_);
    users_ = graph.node_count(NodeType::user());
    items_ = graph.node_count(NodeType::target_item());
    tags_ = graph.node_count(NodeType::tag());

    auto tm = std::make_shared<SparseRows>();
    tm->cols = tags_;
    for (Index t = 0; t < tags_; ++t) {
      const auto nb = graph.neighbors({NodeType::tag(), t}, EdgeType::tag_tag());
      if (nb.empty()) tm->add_unit_row(t);
      else tm->add_mean_row(nb);
    }
    tag_mean_ = std::move(tm);

    auto im = std::make_shared<SparseRows>();
    im->cols = tags_;
    tagless_.assign(items_, 0);
    for (Index r = 0; r < items_; ++r) {
      const auto nb = graph.neighbors({NodeType::target_item(), r}, EdgeType::item_tag());
      if (nb.empty()) {
        tagless_[r] = 1;
        im->add_empty_row();
      } else {
        im->add_mean_row(nb);
      }
    }
    item_tag_mean_ = std::move(im);

    neighbors_.resize(users_);
    for (Index u = 0; u < users_; ++u) {
      for (const auto& s : schemas_) {
        neighbors_[u].push_back(metapath_neighbors(graph, u, s, cfg.neighbor_cap, cfg.seed));
      }
    }
  }

  const HeteroGraph& graph() const { return *graph_; }
  const std::vector<MetapathSchema>& schemas() const { return schemas_; }
  std::size_t users() const { return users_; }
  std::size_t items() const { return items_; }
  std::size_t tags() const { return tags_; }
  const std::shared_ptr<const SparseRows>& tag_mean() const { return tag_mean_; }
  const std::shared_ptr<const SparseRows>& item_tag_mean() const { return item_tag_mean_; }
  bool tagless(Index item) const { return tagless_.at(item) != 0; }
  const std::vector<Index>& user_tags(Index user, int metapath) const { return neighbors_.at(user).at(metapath); }

 private:
  const HeteroGraph* graph_;
  std::vector<MetapathSchema> schemas_;
  std::size_t users_ = 0, items_ = 0, tags_ = 0;
  std::shared_ptr<const SparseRows> tag_mean_;
  std::shared_ptr<const SparseRows> item_tag_mean_;
  std::vector<std::uint8_t> tagless_;
  std::vector<std::vector<std::vector<Index>>> neighbors_;
};

// Routing outcome for one (user, metapath, layer). Capsules are stored row-wise:
// k_max rows, the first `active` squashed, the rest exactly zero.
struct InterestCapsules {
  int metapath = 0;
  int layer = 0;
  std::vector<Index> tags;
  std::size_t active = 0;
  Tensor capsules;  // slots x d
  Tensor weights;   // n_tags x active
  Tensor logits;    // n_tags x active
};

struct AttentionWeights {
  int layer = 0;
  Tensor logits;   // 1 x M
  Tensor weights;  // 1 x M
  std::vector<std::uint8_t> active;
};

struct UserForward {
  Tensor representation;  // 1 x d
  std::vector<InterestCapsules> capsules;
  std::vector<AttentionWeights> attention;
};

// Builds model quantities on one tape. When `grads` is given, parameters are
// registered with gradient sinks in it.
class ForwardPass {
 public:
  ForwardPass(Tape& tape, const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
              ModelParams* grads = nullptr)
      : tape_(tape), ctx_(ctx), params_(params), cfg_(cfg) {
    if (params.dim() != cfg.dim) throw ContractError("parameter dimension does not match config");
    auto sink = [&](Tensor ModelParams::*m) { return grads ? &(grads->*m) : nullptr; };
    user_ = tape.parameter(params.user, sink(&ModelParams::user));
    item_ = tape.parameter(params.item, sink(&ModelParams::item));
    tag_ = tape.parameter(params.tag, sink(&ModelParams::tag));
    s_ = tape.parameter(params.S, sink(&ModelParams::S));
    s1_ = tape.parameter(params.S1, sink(&ModelParams::S1));
    s2_ = tape.parameter(params.S2, sink(&ModelParams::S2));
    v_ = tape.parameter(params.V, sink(&ModelParams::V));
    tag_layers_.push_back(tag_);
  }

  Var user_table() const { return user_; }
  Var item_table() const { return item_; }
  Var tag_table() const { return tag_; }
  Var context_table() const { return v_; }
  Var routing_transform() const { return s_; }
  Var attention_transform() const { return s1_; }
  Var attention_vector() const { return s2_; }

  // Tag embeddings at layer l (mean over tag-tag neighbors, identity for isolated tags).
  Var tag_layer(int l) {
    while (static_cast<int>(tag_layers_.size()) <= l) {
      tag_layers_.push_back(tape_.spmm(ctx_.tag_mean(), tag_layers_.back()));
    }
    return tag_layers_[l];
  }

  // e*_r for a list of target items (rows in list order).
  Var item_reps(std::span<const Index> items) {
    const int layers = cfg_.layers;
    auto self = std::make_shared<SparseRows>();
    self->cols = ctx_.items();
    for (Index r : items) self->add_unit_row(r, ctx_.tagless(r) ? 1.0 + layers : 1.0);
    Var rep = tape_.spmm(std::move(self), item_);
    if (layers == 0) return rep;
    auto mean = std::make_shared<SparseRows>();
    mean->cols = ctx_.tags();
    const auto& full = *ctx_.item_tag_mean();
    for (Index r : items) {
      const std::size_t b = full.offsets[r], e = full.offsets[r + 1];
      mean->add_row(std::span(full.index).subspan(b, e - b), std::span(full.value).subspan(b, e - b));
    }
    std::shared_ptr<const SparseRows> shared = std::move(mean);
    for (int l = 0; l < layers; ++l) rep = tape_.add(rep, tape_.spmm(shared, tag_layer(l)));
    return rep;
  }

  // e*_u = e0_u + sum over layers of the aggregated tag interests.
  Var user_rep(Index u, UserForward* diag = nullptr) {
    Var rep = tape_.gather_rows(user_, {u});
    for (int l = 0; l < cfg_.layers; ++l) {
      if (auto layer = user_layer(u, l, diag)) rep = tape_.add(rep, *layer);
    }
    return rep;
  }

 private:
  struct Slot {
    Var capsules;
    std::size_t active;
  };

  std::optional<Var> user_layer(Index u, int l, UserForward* diag) {
    const std::size_t d = cfg_.dim;
    const auto& schemas = ctx_.schemas();
    const bool per_domain_single = cfg_.variant == AggregatorVariant::Mean || cfg_.variant == AggregatorVariant::Softmax;
    const std::size_t slots = per_domain_single ? 1 : cfg_.k_max;
    std::vector<Var> parts;
    std::vector<std::uint8_t> active;
    Var e_l = tag_layer(l);
    for (const auto& schema : schemas) {
      const int rho = schema.id();
      const auto& tags = ctx_.user_tags(u, rho);
      InterestCapsules ic;
      ic.metapath = rho;
      ic.layer = l;
      ic.tags = tags;
      std::size_t k = 0;
      if (!tags.empty()) {
        std::vector<std::size_t> rows(tags.begin(), tags.end());
        Var x = tape_.gather_rows(e_l, std::move(rows));
        Var transformed = tape_.matmul(x, s_, false, true);
        switch (cfg_.variant) {
          case AggregatorVariant::Full:
          case AggregatorVariant::Hard: {
            k = adaptive_capsule_count(tags.size(), cfg_.k_max);
            const auto r = route(tape_, transformed, k, cfg_.routing_iters,
                                 routing_logit_init(tags.size(), k, routing_seed(cfg_.seed, u, rho, l)));
            parts.push_back(r.capsules);
            if (diag) {
              ic.weights = tape_.value(r.weights);
              ic.logits = tape_.value(r.logits);
            }
            break;
          }
          case AggregatorVariant::Mean: {
            k = 1;
            parts.push_back(tape_.mean_rows(transformed));
            if (diag) {
              ic.weights = Tensor(tags.size(), 1, 1.0);
              ic.logits = Tensor(tags.size(), 1);
            }
            break;
          }
          case AggregatorVariant::Softmax: {
            k = 1;
            Var h = tape_.matmul(s2_, tape_.tanh(tape_.matmul(transformed, s1_, false, true)), true, true);
            Var w = tape_.softmax_rows(h);
            parts.push_back(tape_.matmul(w, transformed));
            if (diag) {
              const Tensor& wv = tape_.value(w);
              const Tensor& hv = tape_.value(h);
              ic.weights = Tensor(tags.size(), 1, std::vector<double>(wv.data().begin(), wv.data().end()));
              ic.logits = Tensor(tags.size(), 1, std::vector<double>(hv.data().begin(), hv.data().end()));
            }
            break;
          }
        }
      }
      if (slots > k) parts.push_back(tape_.constant(Tensor(slots - k, d)));
      for (std::size_t j = 0; j < slots; ++j) active.push_back(j < k ? 1 : 0);
      ic.active = k;
      if (diag) diag->capsules.push_back(std::move(ic));
    }
    Var z = tape_.concat_rows(parts);
    if (diag) {
      for (std::size_t i = 0; i < schemas.size(); ++i) {
        auto& ic = diag->capsules[diag->capsules.size() - schemas.size() + i];
        ic.capsules = Tensor(slots, d);
        const Tensor& zv = tape_.value(z);
        std::copy_n(zv.data().begin() + static_cast<std::ptrdiff_t>(i * slots * d), slots * d,
                    ic.capsules.data().begin());
      }
    }
    const bool any = std::any_of(active.begin(), active.end(), [](auto a) { return a != 0; });

    AttentionWeights aw;
    aw.layer = l;
    aw.active = active;
    std::optional<Var> pooled;
    switch (cfg_.variant) {
      case AggregatorVariant::Full: {
        const auto a = attend(tape_, z, s1_, s2_, cfg_.gamma, active, cfg_.pad_mask);
        aw.logits = tape_.value(a.logits);
        aw.weights = tape_.value(a.weights);
        if (any) pooled = a.pooled;
        break;
      }
      case AggregatorVariant::Softmax: {
        const auto a = attend(tape_, z, s1_, s2_, 1.0, active, true);
        aw.logits = tape_.value(a.logits);
        aw.weights = tape_.value(a.weights);
        if (any) pooled = a.pooled;
        break;
      }
      case AggregatorVariant::Hard: {
        Var h = tape_.matmul(s2_, tape_.tanh(tape_.matmul(z, s1_, false, true)), true, true);
        const Tensor& hv = tape_.value(h);
        Tensor w(1, active.size());
        std::size_t best = active.size();
        double best_v = 0.0;
        for (std::size_t j = 0; j < active.size(); ++j) {
          if (!active[j]) continue;
          const double p = cfg_.gamma == 0.0 ? 1.0 : std::pow(hv[j], cfg_.gamma);
          if (best == active.size() || p > best_v) best = j, best_v = p;
        }
        if (best < active.size()) w[best] = 1.0;
        aw.logits = hv;
        aw.weights = w;
        if (any) pooled = tape_.matmul(tape_.constant(w), z);
        break;
      }
      case AggregatorVariant::Mean: {
        Tensor w(1, active.size());
        const double n = static_cast<double>(std::count(active.begin(), active.end(), 1));
        for (std::size_t j = 0; j < active.size(); ++j) w[j] = active[j] ? 1.0 / n : 0.0;
        aw.logits = Tensor(1, active.size());
        aw.weights = w;
        if (any) pooled = tape_.matmul(tape_.constant(w), z);
        break;
      }
    }
    if (diag) diag->attention.push_back(std::move(aw));
    return pooled;
  }

  Tape& tape_;
  const ModelContext& ctx_;
  const ModelParams& params_;
  const ModelConfig& cfg_;
  Var user_, item_, tag_, s_, s1_, s2_, v_;
  std::vector<Var> tag_layers_;
};

// ---- value-level entry points ------------------------------------------

// One synchronous tag update: mean over tag-tag neighbors, identity when isolated.
inline Tensor tag_layer_update(const ModelContext& ctx, const Tensor& tag_embs) {
  return spmm(*ctx.tag_mean(), tag_embs);
}

// Mean of the item's tag vectors, or `fallback` (its initial embedding) when it has none.
inline Tensor item_embed(const HeteroGraph& graph, Index item, const Tensor& tag_embs, const Tensor& fallback) {
  const auto nb = graph.neighbors({NodeType::target_item(), item}, EdgeType::item_tag());
  if (nb.empty()) return fallback;
  Tensor out(1, tag_embs.cols());
  for (Index t : nb)
    for (std::size_t c = 0; c < out.cols(); ++c) out[c] += tag_embs(t, c);
  for (auto& x : out.data()) x /= static_cast<double>(nb.size());
  return out;
}

struct RoutingResult {
  Tensor capsules;  // K x d
  Tensor weights;   // n x K
  Tensor logits;    // n x K
};

// Routes unit tag vectors (rows of `tags`) into k capsules through transform S.
inline RoutingResult dynamic_routing(const Tensor& tags, std::size_t k, const Tensor& transform, int iters,
                                     std::uint64_t seed) {
  if (k == 0) throw ContractError("routing needs at least one capsule");
  if (tags.rows() == 0) throw ContractError("routing needs at least one tag");
  Tape t;
  Var x = t.constant(tags);
  Var s = t.constant(transform);
  const auto r = route(t, t.matmul(x, s, false, true), k, iters, routing_logit_init(tags.rows(), k, seed));
  return {t.value(r.capsules), t.value(r.weights), t.value(r.logits)};
}

struct AttentionResult {
  Tensor logits;
  Tensor weights;
  Tensor pooled;
};

inline AttentionResult inter_domain_attention(const Tensor& capsules, const Tensor& s1, const Tensor& s2, double gamma,
                                              const std::vector<std::uint8_t>& active, bool pad_mask) {
  Tape t;
  const auto a = attend(t, t.constant(capsules), t.constant(s1), t.constant(s2), gamma, active, pad_mask);
  return {t.value(a.logits), t.value(a.weights), t.value(a.pooled)};
}

inline UserForward forward_user(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg, Index user) {
  if (user >= ctx.users()) throw ValidationError("unknown user " + std::to_string(user));
  Tape t;
  ForwardPass fp(t, ctx, params, cfg);
  UserForward out;
  out.representation = t.value(fp.user_rep(user, &out));
  return out;
}

inline Tensor forward_item(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg, Index item) {
  if (item >= ctx.items()) throw ValidationError("unknown item " + std::to_string(item));
  Tape t;
  ForwardPass fp(t, ctx, params, cfg);
  const Index one[] = {item};
  return t.value(fp.item_reps(one));
}

// All e*_r as an |R| x d matrix.
inline Tensor all_item_reps(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg) {
  Tape t;
  ForwardPass fp(t, ctx, params, cfg);
  std::vector<Index> items(ctx.items());
  for (Index i = 0; i < items.size(); ++i) items[i] = i;
  return t.value(fp.item_reps(items));
}

// All e*_u as a |U| x d matrix.
inline Tensor all_user_reps(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg) {
  Tensor out(ctx.users(), cfg.dim);
  for (Index u = 0; u < ctx.users(); ++u) {
    Tape t;
    ForwardPass fp(t, ctx, params, cfg);
    const Tensor& rep = t.value(fp.user_rep(u));
    std::copy(rep.data().begin(), rep.data().end(), out.row_span(u).begin());
  }
  return out;
}

}  // namespace m2gnn
