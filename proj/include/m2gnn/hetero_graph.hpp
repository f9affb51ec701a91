#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/rng.hpp"

namespace m2gnn {

using Index = std::uint32_t;

enum class NodeKind : std::uint8_t { User, TargetItem, SourceItem, Bridge, Tag };

// A node type. SourceItem and Bridge carry the 1-based index of their source domain;
// the other kinds have domain 0.
struct NodeType {
  NodeKind kind = NodeKind::User;
  std::uint16_t domain = 0;

  static constexpr NodeType user() { return {NodeKind::User, 0}; }
  static constexpr NodeType target_item() { return {NodeKind::TargetItem, 0}; }
  static constexpr NodeType tag() { return {NodeKind::Tag, 0}; }
  static NodeType source_item(std::uint16_t domain) { return checked(NodeKind::SourceItem, domain); }
  static NodeType bridge(std::uint16_t domain) { return checked(NodeKind::Bridge, domain); }

  bool has_domain() const { return kind == NodeKind::SourceItem || kind == NodeKind::Bridge; }

  friend constexpr auto operator<=>(const NodeType&, const NodeType&) = default;

 private:
  static NodeType checked(NodeKind kind, std::uint16_t domain) {
    if (domain == 0) throw SchemaError("source-domain index must be >= 1");
    return {kind, domain};
  }
};

inline std::string to_string(NodeType t) {
  switch (t.kind) {
    case NodeKind::User: return "user";
    case NodeKind::TargetItem: return "target_item";
    case NodeKind::Tag: return "tag";
    case NodeKind::SourceItem: return "source_item." + std::to_string(t.domain);
    case NodeKind::Bridge: return "bridge." + std::to_string(t.domain);
  }
  return "?";
}

inline NodeType parse_node_type(std::string_view s) {
  if (s == "user") return NodeType::user();
  if (s == "target_item") return NodeType::target_item();
  if (s == "tag") return NodeType::tag();
  const auto dot = s.find('.');
  if (dot != std::string_view::npos) {
    const auto head = s.substr(0, dot);
    const auto tail = s.substr(dot + 1);
    unsigned domain = 0;
    const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), domain);
    if (ec == std::errc{} && ptr == tail.data() + tail.size() && domain > 0 && domain < 65536) {
      if (head == "source_item") return NodeType::source_item(static_cast<std::uint16_t>(domain));
      if (head == "bridge") return NodeType::bridge(static_cast<std::uint16_t>(domain));
    }
  }
  throw SchemaError("unknown node type '" + std::string(s) + "'");
}

struct NodeId {
  NodeType type;
  Index index = 0;

  friend constexpr auto operator<=>(const NodeId&, const NodeId&) = default;
};

// A relation between two node types. Only tag-tag is symmetric.
struct EdgeType {
  NodeType src;
  NodeType dst;
  bool symmetric = false;

  // Builds the edge type for (src, dst), rejecting relations outside the
  // tag-associated graph: user->target_item, user->source_item.k,
  // source_item.k->bridge.k, {target_item, source_item.k, bridge.k}->tag, tag-tag.
  static EdgeType between(NodeType src, NodeType dst) {
    if (!is_allowed(src, dst)) {
      throw SchemaError("relation " + to_string(src) + " -> " + to_string(dst) + " is not allowed");
    }
    return {src, dst, src.kind == NodeKind::Tag};
  }
  static EdgeType user_target() { return between(NodeType::user(), NodeType::target_item()); }
  static EdgeType item_tag() { return between(NodeType::target_item(), NodeType::tag()); }
  static EdgeType tag_tag() { return between(NodeType::tag(), NodeType::tag()); }

  static bool is_allowed(NodeType src, NodeType dst) {
    switch (src.kind) {
      case NodeKind::User:
        return dst.kind == NodeKind::TargetItem || dst.kind == NodeKind::SourceItem;
      case NodeKind::SourceItem:
        return dst.kind == NodeKind::Tag || (dst.kind == NodeKind::Bridge && dst.domain == src.domain);
      case NodeKind::TargetItem:
      case NodeKind::Bridge:
      case NodeKind::Tag:
        return dst.kind == NodeKind::Tag;
    }
    return false;
  }

  friend constexpr auto operator<=>(const EdgeType&, const EdgeType&) = default;
};

inline std::string to_string(const EdgeType& e) {
  return to_string(e.src) + (e.symmetric ? "-" : "->") + to_string(e.dst);
}

// Compressed adjacency for one edge type.
struct Adjacency {
  std::vector<std::size_t> offsets;  // size = node count of src type + 1
  std::vector<Index> targets;
};

class GraphBuilder;

// Frozen typed heterogeneous graph. Obtained from GraphBuilder::freeze(); immutable,
// safe to share between concurrent readers.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  std::size_t node_count(NodeType t) const {
    const auto it = counts_.find(t);
    return it == counts_.end() ? 0 : it->second;
  }
  const std::map<NodeType, std::size_t>& node_counts() const { return counts_; }
  int source_domains() const { return source_domains_; }

  std::vector<EdgeType> edge_types() const {
    std::vector<EdgeType> out;
    for (const auto& [k, _] : adjacency_) out.push_back(k);
    return out;
  }

  // Number of stored adjacency entries; a symmetric edge counts once per direction.
  std::size_t edge_count(const EdgeType& e) const {
    const auto it = adjacency_.find(e);
    return it == adjacency_.end() ? 0 : it->second.targets.size();
  }

  // Sorted, duplicate-free destination indices of `node` along `e`.
  std::span<const Index> neighbors(NodeId node, const EdgeType& e) const {
    if (node.type != e.src) {
      throw SchemaError("node of type " + to_string(node.type) + " queried along " + to_string(e));
    }
    if (node.index >= node_count(node.type)) {
      throw ValidationError("node index " + std::to_string(node.index) + " out of range for " +
                            to_string(node.type));
    }
    const auto it = adjacency_.find(e);
    if (it == adjacency_.end()) return {};
    const auto& adj = it->second;
    return {adj.targets.data() + adj.offsets[node.index],
            adj.targets.data() + adj.offsets[node.index + 1]};
  }

  std::size_t degree(NodeId node, const EdgeType& e) const { return neighbors(node, e).size(); }

 private:
  friend class GraphBuilder;
  std::map<NodeType, std::size_t> counts_;
  std::map<EdgeType, Adjacency> adjacency_;
  int source_domains_ = 0;
};

// Single-writer builder. Edges are stored with set semantics; symmetric relations
// record both directions.
class GraphBuilder {
 public:
  GraphBuilder(std::map<NodeType, std::size_t> counts, int source_domains)
      : counts_(std::move(counts)), source_domains_(source_domains) {
    for (const auto& [t, _] : counts_) {
      if (t.has_domain() && (t.domain < 1 || t.domain > source_domains_)) {
        throw SchemaError("node type " + to_string(t) + " exceeds the declared " +
                          std::to_string(source_domains_) + " source domains");
      }
    }
  }

  void add_edge(const EdgeType& e, NodeId src, NodeId dst) {
    if (frozen_) throw StateError("graph is frozen");
    if (!EdgeType::is_allowed(e.src, e.dst) || e.symmetric != (e.src.kind == NodeKind::Tag)) {
      throw SchemaError("invalid edge type " + to_string(e));
    }
    if (src.type != e.src || dst.type != e.dst) {
      throw SchemaError("edge " + to_string(src.type) + " -> " + to_string(dst.type) +
                        " does not match edge type " + to_string(e));
    }
    check_index(src);
    check_index(dst);
    if (src == dst) throw ValidationError("self-loop on " + to_string(e));
    auto& list = pending_[e];
    list.emplace_back(src.index, dst.index);
    if (e.symmetric) list.emplace_back(dst.index, src.index);
  }

  // Registers an edge type with no edges, so queries along it return empty lists.
  void declare(const EdgeType& e) {
    if (frozen_) throw StateError("graph is frozen");
    pending_[e];
  }

  bool frozen() const { return frozen_; }

  HeteroGraph freeze() {
    if (frozen_) throw StateError("graph is already frozen");
    frozen_ = true;
    HeteroGraph g;
    g.counts_ = counts_;
    g.source_domains_ = source_domains_;
    for (auto& [e, list] : pending_) {
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      Adjacency adj;
      const std::size_t n = counts_.at(e.src);
      adj.offsets.assign(n + 1, 0);
      for (const auto& [s, _] : list) ++adj.offsets[s + 1];
      for (std::size_t i = 0; i < n; ++i) adj.offsets[i + 1] += adj.offsets[i];
      adj.targets.reserve(list.size());
      for (const auto& [_, d] : list) adj.targets.push_back(d);
      g.adjacency_.emplace(e, std::move(adj));
    }
    pending_.clear();
    return g;
  }

 private:
  void check_index(NodeId n) const {
    const auto it = counts_.find(n.type);
    if (it == counts_.end()) throw SchemaError("undeclared node type " + to_string(n.type));
    if (n.index >= it->second) {
      throw ValidationError("index " + std::to_string(n.index) + " >= declared count " +
                            std::to_string(it->second) + " of " + to_string(n.type));
    }
  }

  std::map<NodeType, std::size_t> counts_;
  int source_domains_;
  std::map<EdgeType, std::vector<std::pair<Index, Index>>> pending_;
  bool frozen_ = false;
};

// A user-to-tag reasoning chain for one domain, e.g. user -> target_item -> tag.
class MetapathSchema {
 public:
  MetapathSchema(int id, std::vector<NodeType> path) : id_(id), path_(std::move(path)) {
    if (id_ < 0) throw SchemaError("metapath id must be non-negative");
    if (path_.size() < 2) throw SchemaError("metapath needs at least two node types");
    if (path_.front() != NodeType::user()) throw SchemaError("metapath must start at user");
    if (path_.back() != NodeType::tag()) throw SchemaError("metapath must end at tag");
    for (std::size_t i = 0; i + 1 < path_.size(); ++i) {
      edges_.push_back(EdgeType::between(path_[i], path_[i + 1]));
    }
  }

  int id() const { return id_; }
  const std::vector<NodeType>& path() const { return path_; }
  const std::vector<EdgeType>& edges() const { return edges_; }

  std::string describe() const {
    std::string s;
    for (std::size_t i = 0; i < path_.size(); ++i) {
      if (i) s += ' ';
      s += to_string(path_[i]);
    }
    return s;
  }

 private:
  int id_;
  std::vector<NodeType> path_;
  std::vector<EdgeType> edges_;
};

// Schema sets must be non-empty with ids 0..n-1 in order.
inline void validate_schemas(std::span<const MetapathSchema> schemas) {
  if (schemas.empty()) throw SchemaError("at least one metapath is required");
  for (std::size_t i = 0; i < schemas.size(); ++i) {
    if (schemas[i].id() != static_cast<int>(i)) {
      throw SchemaError("metapath ids must be 0..n-1 in declaration order");
    }
  }
}

inline constexpr std::size_t kUnlimited = static_cast<std::size_t>(-1);

// Tags reachable from `user` along `schema`, as a sorted set. When the set exceeds
// `cap`, a uniform subset of size `cap` is drawn with a generator seeded by
// (seed, user, schema id) and returned sorted.
inline std::vector<Index> metapath_neighbors(const HeteroGraph& graph, Index user,
                                             const MetapathSchema& schema, std::size_t cap,
                                             std::uint64_t seed) {
  if (cap == 0) throw ValidationError("neighbor cap must be positive");
  std::vector<Index> frontier{user};
  NodeType type = NodeType::user();
  if (user >= graph.node_count(type)) throw ValidationError("user index out of range");
  for (const auto& e : schema.edges()) {
    std::vector<Index> next;
    for (Index v : frontier) {
      const auto nb = graph.neighbors({type, v}, e);
      next.insert(next.end(), nb.begin(), nb.end());
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    frontier = std::move(next);
    type = e.dst;
    if (frontier.empty()) break;
  }
  if (frontier.size() > cap) {
    Rng rng(derive_seed({seed, user, static_cast<std::uint64_t>(schema.id())}));
    for (std::size_t i = 0; i < cap; ++i) {
      const auto j = i + rng.below(frontier.size() - i);
      std::swap(frontier[i], frontier[j]);
    }
    frontier.resize(cap);
    std::sort(frontier.begin(), frontier.end());
  }
  return frontier;
}

}  // namespace m2gnn
