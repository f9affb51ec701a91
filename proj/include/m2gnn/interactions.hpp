#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "m2gnn/hetero_graph.hpp"

namespace m2gnn {

struct Interaction {
  Index user = 0;
  Index item = 0;

  friend constexpr auto operator<=>(const Interaction&, const Interaction&) = default;
};

using Interactions = std::vector<Interaction>;

// Per-user sorted, duplicate-free item sets for one split.
class InteractionIndex {
 public:
  InteractionIndex() = default;
  InteractionIndex(std::span<const Interaction> pairs, std::size_t users, std::size_t items)
      : items_(items), per_user_(users) {
    for (const auto& p : pairs) {
      if (p.user >= users || p.item >= items) throw ValidationError("interaction index out of range");
      per_user_[p.user].push_back(p.item);
    }
    for (auto& v : per_user_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (Index u = 0; u < users; ++u)
      for (Index i : per_user_[u]) pairs_.push_back({u, i});
  }

  std::size_t users() const { return per_user_.size(); }
  std::size_t items() const { return items_; }
  const std::vector<Interaction>& pairs() const { return pairs_; }
  std::span<const Index> items_of(Index user) const { return per_user_.at(user); }
  std::size_t count(Index user) const { return per_user_.at(user).size(); }
  bool contains(Index user, Index item) const {
    const auto& v = per_user_.at(user);
    return std::binary_search(v.begin(), v.end(), item);
  }

 private:
  std::size_t items_ = 0;
  std::vector<std::vector<Index>> per_user_;
  std::vector<Interaction> pairs_;
};

}  // namespace m2gnn
