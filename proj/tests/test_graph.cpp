#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "m2gnn/hetero_graph.hpp"
#include "m2gnn/rng.hpp"

using namespace m2gnn;

namespace {

std::map<NodeType, std::size_t> small_counts() {
  return {{NodeType::user(), 3},
          {NodeType::target_item(), 4},
          {NodeType::tag(), 6},
          {NodeType::source_item(1), 2},
          {NodeType::bridge(1), 2}};
}

NodeId U(Index i) { return {NodeType::user(), i}; }
NodeId R(Index i) { return {NodeType::target_item(), i}; }
NodeId T(Index i) { return {NodeType::tag(), i}; }

std::vector<Index> as_vec(std::span<const Index> s) { return {s.begin(), s.end()}; }

// Breadth-first walk with explicit set bookkeeping, independent of the CSR path.
std::set<Index> bfs_oracle(const std::vector<std::set<std::pair<Index, Index>>>& hops, Index user) {
  std::set<Index> frontier{user};
  for (const auto& edges : hops) {
    std::set<Index> next;
    for (const auto& [s, d] : edges)
      if (frontier.count(s)) next.insert(d);
    frontier = next;
  }
  return frontier;
}

}  // namespace

TEST(NodeTypes, DomainMustBePositive) {
  EXPECT_THROW(NodeType::source_item(0), SchemaError);
  EXPECT_THROW(NodeType::bridge(0), SchemaError);
  EXPECT_EQ(to_string(NodeType::bridge(2)), "bridge.2");
  EXPECT_EQ(parse_node_type("source_item.3"), NodeType::source_item(3));
  EXPECT_EQ(parse_node_type("tag"), NodeType::tag());
  EXPECT_THROW(parse_node_type("widget"), SchemaError);
}

TEST(NodeTypes, DomainBeyondDeclaredCountRejected) {
  std::map<NodeType, std::size_t> counts{{NodeType::user(), 1}, {NodeType::source_item(3), 1}};
  EXPECT_THROW(GraphBuilder(counts, 2), SchemaError);
}

TEST(EdgeTypes, OnlyTagTagIsSymmetric) {
  EXPECT_TRUE(EdgeType::tag_tag().symmetric);
  EXPECT_FALSE(EdgeType::item_tag().symmetric);
  EXPECT_FALSE(EdgeType::user_target().symmetric);
  EXPECT_THROW(EdgeType::between(NodeType::tag(), NodeType::user()), SchemaError);
  EXPECT_THROW(EdgeType::between(NodeType::source_item(1), NodeType::bridge(2)), SchemaError);
}

TEST(GraphBuilder, TagTagEdgeQueryableBothWays) {
  GraphBuilder b(small_counts(), 1);
  b.add_edge(EdgeType::tag_tag(), T(1), T(2));
  const auto g = b.freeze();
  EXPECT_EQ(as_vec(g.neighbors(T(2), EdgeType::tag_tag())), std::vector<Index>{1});
  EXPECT_EQ(as_vec(g.neighbors(T(1), EdgeType::tag_tag())), std::vector<Index>{2});
}

TEST(GraphBuilder, DuplicateEdgesStoredOnce) {
  GraphBuilder b(small_counts(), 1);
  b.add_edge(EdgeType::user_target(), U(1), R(1));
  b.add_edge(EdgeType::user_target(), U(1), R(1));
  b.add_edge(EdgeType::tag_tag(), T(0), T(1));
  b.add_edge(EdgeType::tag_tag(), T(1), T(0));
  const auto g = b.freeze();
  EXPECT_EQ(g.edge_count(EdgeType::user_target()), 1u);
  EXPECT_EQ(g.edge_count(EdgeType::tag_tag()), 2u);
}

TEST(GraphBuilder, Errors) {
  GraphBuilder b(small_counts(), 1);
  EXPECT_THROW(b.add_edge(EdgeType::user_target(), T(0), R(1)), SchemaError);
  EXPECT_THROW(b.add_edge(EdgeType::tag_tag(), T(3), T(3)), ValidationError);
  EXPECT_THROW(b.add_edge(EdgeType::user_target(), U(3), R(0)), ValidationError);
  EXPECT_THROW(b.add_edge(EdgeType::user_target(), U(0), R(4)), ValidationError);
  EdgeType bogus{NodeType::target_item(), NodeType::tag(), true};
  EXPECT_THROW(b.add_edge(bogus, R(0), T(0)), SchemaError);
  b.freeze();
  EXPECT_THROW(b.add_edge(EdgeType::tag_tag(), T(0), T(1)), StateError);
  EXPECT_THROW(b.freeze(), StateError);
}

TEST(HeteroGraph, NeighborsSortedAndStable) {
  GraphBuilder b(small_counts(), 1);
  b.add_edge(EdgeType::item_tag(), R(1), T(3));
  b.add_edge(EdgeType::item_tag(), R(1), T(1));
  const auto g = b.freeze();
  EXPECT_EQ(as_vec(g.neighbors(R(1), EdgeType::item_tag())), (std::vector<Index>{1, 3}));
  EXPECT_TRUE(g.neighbors(R(0), EdgeType::item_tag()).empty());
  EXPECT_TRUE(g.neighbors(U(0), EdgeType::user_target()).empty());  // undeclared type
  EXPECT_EQ(as_vec(g.neighbors(R(1), EdgeType::item_tag())), as_vec(g.neighbors(R(1), EdgeType::item_tag())));
  EXPECT_THROW(g.neighbors(T(0), EdgeType::item_tag()), SchemaError);
}

TEST(HeteroGraph, DegreeSumMatchesEdgeCountAndSymmetryHolds) {
  Rng rng(11);
  std::map<NodeType, std::size_t> counts{{NodeType::user(), 30}, {NodeType::target_item(), 40}, {NodeType::tag(), 50}};
  GraphBuilder b(counts, 0);
  for (int i = 0; i < 400; ++i) {
    b.add_edge(EdgeType::user_target(), U(rng.below(30)), R(rng.below(40)));
    b.add_edge(EdgeType::item_tag(), R(rng.below(40)), T(rng.below(50)));
    const Index a = rng.below(50), c = rng.below(50);
    if (a != c) b.add_edge(EdgeType::tag_tag(), T(a), T(c));
  }
  const auto g = b.freeze();
  for (const auto& e : g.edge_types()) {
    std::size_t sum = 0;
    for (Index v = 0; v < g.node_count(e.src); ++v) sum += g.degree({e.src, v}, e);
    EXPECT_EQ(sum, g.edge_count(e)) << to_string(e);
  }
  for (Index t = 0; t < 50; ++t) {
    for (Index o : g.neighbors(T(t), EdgeType::tag_tag())) {
      const auto back = g.neighbors(T(o), EdgeType::tag_tag());
      EXPECT_TRUE(std::binary_search(back.begin(), back.end(), t));
      EXPECT_NE(o, t);
    }
  }
}

TEST(MetapathSchema, Validation) {
  EXPECT_THROW(MetapathSchema(0, {NodeType::target_item(), NodeType::tag()}), SchemaError);
  EXPECT_THROW(MetapathSchema(0, {NodeType::user(), NodeType::target_item()}), SchemaError);
  EXPECT_THROW(MetapathSchema(0, {NodeType::user(), NodeType::tag()}), SchemaError);
  EXPECT_THROW(MetapathSchema(0, {NodeType::user(), NodeType::source_item(1), NodeType::bridge(2), NodeType::tag()}),
               SchemaError);
  std::vector<MetapathSchema> s{MetapathSchema(1, {NodeType::user(), NodeType::target_item(), NodeType::tag()})};
  EXPECT_THROW(validate_schemas(s), SchemaError);
  EXPECT_THROW(validate_schemas(std::span<const MetapathSchema>{}), SchemaError);
  const MetapathSchema ok(0, {NodeType::user(), NodeType::source_item(1), NodeType::bridge(1), NodeType::tag()});
  EXPECT_EQ(ok.edges().size(), 3u);
  EXPECT_EQ(ok.describe(), "user source_item.1 bridge.1 tag");
}

TEST(MetapathNeighbors, TwoHopAndThreeHop) {
  GraphBuilder b(small_counts(), 1);
  b.add_edge(EdgeType::user_target(), U(1), R(1));
  b.add_edge(EdgeType::item_tag(), R(1), T(1));
  b.add_edge(EdgeType::item_tag(), R(1), T(2));
  const auto P = NodeType::source_item(1), B = NodeType::bridge(1);
  b.add_edge(EdgeType::between(NodeType::user(), P), U(1), {P, 0});
  b.add_edge(EdgeType::between(P, B), {P, 0}, {B, 1});
  b.add_edge(EdgeType::between(B, NodeType::tag()), {B, 1}, T(5));
  const auto g = b.freeze();
  const MetapathSchema umt(0, {NodeType::user(), NodeType::target_item(), NodeType::tag()});
  const MetapathSchema upbt(1, {NodeType::user(), P, B, NodeType::tag()});
  EXPECT_EQ(metapath_neighbors(g, 1, umt, 10, 0), (std::vector<Index>{1, 2}));
  EXPECT_EQ(metapath_neighbors(g, 1, upbt, 10, 0), (std::vector<Index>{5}));
  EXPECT_TRUE(metapath_neighbors(g, 0, umt, 10, 0).empty());
  EXPECT_THROW(metapath_neighbors(g, 1, umt, 0, 0), ValidationError);
}

TEST(MetapathNeighbors, UncappedEqualsBreadthFirstOracle) {
  Rng rng(5);
  std::map<NodeType, std::size_t> counts{{NodeType::user(), 40}, {NodeType::target_item(), 200}, {NodeType::tag(), 300},
                                         {NodeType::source_item(1), 150}, {NodeType::bridge(1), 100}};
  const auto P = NodeType::source_item(1), B = NodeType::bridge(1);
  GraphBuilder b(counts, 1);
  std::vector<std::set<std::pair<Index, Index>>> umt(2), upbt(3);
  auto add = [&](const EdgeType& e, NodeId s, NodeId d, std::set<std::pair<Index, Index>>& rec) {
    b.add_edge(e, s, d);
    rec.insert({s.index, d.index});
  };
  for (int i = 0; i < 300; ++i) add(EdgeType::user_target(), U(rng.below(40)), R(rng.below(200)), umt[0]);
  for (int i = 0; i < 500; ++i) add(EdgeType::item_tag(), R(rng.below(200)), T(rng.below(300)), umt[1]);
  for (int i = 0; i < 200; ++i) add(EdgeType::between(NodeType::user(), P), U(rng.below(40)), {P, static_cast<Index>(rng.below(150))}, upbt[0]);
  for (int i = 0; i < 200; ++i) add(EdgeType::between(P, B), {P, static_cast<Index>(rng.below(150))}, {B, static_cast<Index>(rng.below(100))}, upbt[1]);
  for (int i = 0; i < 300; ++i) add(EdgeType::between(B, NodeType::tag()), {B, static_cast<Index>(rng.below(100))}, T(rng.below(300)), upbt[2]);
  const auto g = b.freeze();
  const MetapathSchema s0(0, {NodeType::user(), NodeType::target_item(), NodeType::tag()});
  const MetapathSchema s1(1, {NodeType::user(), P, B, NodeType::tag()});
  for (Index u = 0; u < 40; ++u) {
    const auto o0 = bfs_oracle(umt, u), o1 = bfs_oracle(upbt, u);
    EXPECT_EQ(metapath_neighbors(g, u, s0, kUnlimited, 1), std::vector<Index>(o0.begin(), o0.end()));
    EXPECT_EQ(metapath_neighbors(g, u, s1, kUnlimited, 1), std::vector<Index>(o1.begin(), o1.end()));
  }
}

class HundredTags : public ::testing::Test {
 protected:
  void SetUp() override {
    std::map<NodeType, std::size_t> counts{{NodeType::user(), 2}, {NodeType::target_item(), 10}, {NodeType::tag(), 100}};
    GraphBuilder b(counts, 0);
    for (Index r = 0; r < 10; ++r) {
      b.add_edge(EdgeType::user_target(), U(0), R(r));
      for (Index k = 0; k < 10; ++k) b.add_edge(EdgeType::item_tag(), R(r), T(r * 10 + k));
    }
    b.add_edge(EdgeType::user_target(), U(1), R(0));
    graph = b.freeze();
  }
  HeteroGraph graph;
  MetapathSchema schema{0, {NodeType::user(), NodeType::target_item(), NodeType::tag()}};
};

TEST_F(HundredTags, CappedSamplePinned) {
  const auto s = metapath_neighbors(graph, 0, schema, 32, 42);
  const std::vector<Index> pinned{
#include "snapshots/cap32_seed42.inc"
  };
  EXPECT_EQ(s, pinned);
  EXPECT_EQ(metapath_neighbors(graph, 0, schema, 32, 42), s);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
}

TEST_F(HundredTags, SeedChangesSampleAndSmallSetsUntouched) {
  EXPECT_NE(metapath_neighbors(graph, 0, schema, 32, 42), metapath_neighbors(graph, 0, schema, 32, 43));
  EXPECT_EQ(metapath_neighbors(graph, 0, schema, 100, 42).size(), 100u);
  EXPECT_EQ(metapath_neighbors(graph, 1, schema, 32, 42).size(), 10u);
}

TEST_F(HundredTags, SampleIsUniform) {
  // Inclusion frequency of each tag over many seeds: chi-square against cap/n.
  std::vector<double> counts(100, 0.0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s)
    for (Index t : metapath_neighbors(graph, 0, schema, 32, 1000 + s)) counts[t] += 1.0;
  const double expected = trials * 32.0 / 100.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Inclusion indicators are negatively correlated, so this statistic is conservative;
  // 99.9% quantile of chi-square(99) is about 148.
  EXPECT_LT(chi2, 148.0);
}
