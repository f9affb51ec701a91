#pragma once

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "m2gnn/evaluation.hpp"
#include "m2gnn/model.hpp"

namespace m2gnn {

struct Recommendation {
  Index item = 0;
  double score = 0.0;
};

// Top-k target items for `user` by inner product, training positives excluded,
// ties by ascending item index. k is clamped to the catalog.
inline std::vector<Recommendation> recommend(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                                             const InteractionIndex& train, Index user, std::size_t k,
                                             const Tensor* item_reps = nullptr) {
  if (user >= ctx.users()) throw ValidationError("unknown user " + std::to_string(user));
  const Tensor u = forward_user(ctx, params, cfg, user).representation;
  const Tensor items = item_reps ? *item_reps : all_item_reps(ctx, params, cfg);
  std::vector<double> scores(items.rows());
  for (Index i = 0; i < scores.size(); ++i) scores[i] = score(u.row_span(0), items.row_span(i));
  std::vector<Recommendation> out;
  for (Index i : top_k(scores, train.items_of(user), k)) out.push_back({i, scores[i]});
  return out;
}

struct ExplainDump {
  Index user = 0;
  UserGroup group = UserGroup::ColdStart;
  UserForward forward;
  std::vector<Recommendation> items;

  // Capsule with the largest final routing logit, per tag of one (metapath, layer).
  static std::vector<std::size_t> assignments(const InterestCapsules& ic) {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < ic.tags.size(); ++t) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < ic.logits.cols(); ++j)
        if (ic.logits(t, j) > ic.logits(t, best)) best = j;
      out.push_back(best);
    }
    return out;
  }
};

inline ExplainDump explain(const ModelContext& ctx, const ModelParams& params, const ModelConfig& cfg,
                           const InteractionIndex& train, Index user, std::size_t k) {
  ExplainDump d;
  d.user = user;
  d.group = segment_users(train)[user];
  d.forward = forward_user(ctx, params, cfg, user);
  d.items = recommend(ctx, params, cfg, train, user, k);
  return d;
}

inline std::string join_reals(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_real(v[i]);
  }
  return s;
}

// One record per line, space-separated key=value fields; the first field names the record kind.
inline std::string to_text(const ExplainDump& d, std::size_t metapaths) {
  std::ostringstream os;
  os << "user id=" << d.user << " group=" << to_string(d.group) << '\n';
  for (const auto& ic : d.forward.capsules) {
    os << "capsules metapath=" << ic.metapath << " layer=" << ic.layer << " tags=" << ic.tags.size()
       << " active=" << ic.active << '\n';
    const auto assign = ExplainDump::assignments(ic);
    for (std::size_t t = 0; t < ic.tags.size(); ++t) {
      os << "route metapath=" << ic.metapath << " layer=" << ic.layer << " tag=" << ic.tags[t]
         << " capsule=" << assign[t] << " logits=" << join_reals(ic.logits.row_span(t)) << '\n';
    }
  }
  for (const auto& aw : d.forward.attention) {
    const std::size_t slots = metapaths ? aw.weights.cols() / metapaths : 0;
    for (std::size_t j = 0; j < aw.weights.cols(); ++j) {
      os << "attention layer=" << aw.layer << " slot=" << j << " metapath=" << (slots ? j / slots : 0)
         << " capsule=" << (slots ? j % slots : j) << " active=" << int(aw.active[j])
         << " logit=" << format_real(aw.logits[j]) << " weight=" << format_real(aw.weights[j]) << '\n';
    }
  }
  for (std::size_t r = 0; r < d.items.size(); ++r) {
    os << "item rank=" << r + 1 << " id=" << d.items[r].item << " score=" << format_real(d.items[r].score) << '\n';
  }
  return os.str();
}

}  // namespace m2gnn
