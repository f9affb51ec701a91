#pragma once

// Shared test inputs: a hand-built two-domain graph and small synthetic specs.

#include <map>
#include <vector>

#include "m2gnn/hetero_graph.hpp"
#include "m2gnn/model.hpp"
#include "m2gnn/synthetic.hpp"

namespace m2gnn::testing {

// A small two-domain graph: metapaths user-target_item-tag and user-source_item.1-tag.
struct Toy {
  HeteroGraph graph;
  std::vector<MetapathSchema> schemas;

  static Toy make() {
    const auto P = NodeType::source_item(1);
    std::map<NodeType, std::size_t> counts{
        {NodeType::user(), 5}, {NodeType::target_item(), 6}, {NodeType::tag(), 9}, {P, 4}};
    GraphBuilder b(counts, 1);
    auto ut = [&](Index u, Index r) { b.add_edge(EdgeType::user_target(), {NodeType::user(), u}, {NodeType::target_item(), r}); };
    auto rt = [&](Index r, Index t) { b.add_edge(EdgeType::item_tag(), {NodeType::target_item(), r}, {NodeType::tag(), t}); };
    auto up = [&](Index u, Index p) { b.add_edge(EdgeType::between(NodeType::user(), P), {NodeType::user(), u}, {P, p}); };
    auto pt = [&](Index p, Index t) { b.add_edge(EdgeType::between(P, NodeType::tag()), {P, p}, {NodeType::tag(), t}); };
    auto tt = [&](Index a, Index c) { b.add_edge(EdgeType::tag_tag(), {NodeType::tag(), a}, {NodeType::tag(), c}); };
    ut(0, 0), ut(0, 1), ut(0, 3), ut(1, 2), ut(3, 5);
    rt(0, 0), rt(0, 1), rt(1, 1), rt(1, 2), rt(2, 3), rt(3, 4), rt(3, 5), rt(3, 6), rt(5, 7);  // item 4 is tagless
    up(0, 0), up(0, 2), up(1, 1), up(2, 3);
    pt(0, 6), pt(0, 7), pt(1, 0), pt(2, 8), pt(2, 1), pt(3, 2), pt(3, 3), pt(3, 4);
    tt(0, 1), tt(1, 2), tt(3, 4), tt(4, 5), tt(3, 5), tt(6, 7);  // tag 8 isolated
    b.declare(EdgeType::between(NodeType::user(), P));
    Toy toy{b.freeze(), {}};
    toy.schemas.emplace_back(0, std::vector<NodeType>{NodeType::user(), NodeType::target_item(), NodeType::tag()});
    toy.schemas.emplace_back(1, std::vector<NodeType>{NodeType::user(), P, NodeType::tag()});
    return toy;
  }
};

inline ModelConfig toy_config(AggregatorVariant v, int layers, double gamma = 6.0) {
  ModelConfig c;
  c.dim = 4;
  c.layers = layers;
  c.k_max = 2;
  c.gamma = gamma;
  c.variant = v;
  c.seed = 17;
  c.init_scale = 0.5;
  return c;
}

// 20 users, 30 target items, 50 tags: small enough for exhaustive finite differences.
inline SyntheticSpec gradient_toy_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.users = 20;
  s.target_items = 30;
  s.tags = 50;
  s.source_items = 24;
  s.clusters = 2;
  s.noise_clusters = 2;
  s.max_user_clusters = 2;
  s.active_max_train = 10;
  s.validation_per_user = 1;
  s.test_per_user = 2;
  s.source_interactions = 6;
  s.seed = seed;
  return s;
}

inline ModelConfig gradient_toy_config() {
  ModelConfig c;
  c.dim = 8;
  c.layers = 2;
  c.k_max = 4;
  c.gamma = 6.0;
  c.seed = 11;
  c.init_scale = 0.3;
  return c;
}

}  // namespace m2gnn::testing
