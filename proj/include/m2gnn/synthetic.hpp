#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "m2gnn/dataset.hpp"
#include "m2gnn/error.hpp"
#include "m2gnn/rng.hpp"

namespace m2gnn {

// Planted-cluster cross-domain data. Tags are split into interest clusters (which
// also describe target items) and noise clusters (source-domain only). Each user
// likes 1..max_user_clusters interest clusters; target interactions come only
// from those clusters, while each source interaction is a noise draw with
// probability noise_ratio: an item of a noise cluster, or, when there are none,
// of an interest cluster the user does not like.
struct SyntheticSpec {
  std::size_t users = 300;
  std::size_t target_items = 600;
  std::size_t tags = 192;
  int source_domains = 2;
  std::size_t source_items = 960;    // per source domain
  std::size_t bridges_per_item = 2;  // domains >= 2 route item -> bridge -> tag
  std::size_t clusters = 8;
  std::size_t noise_clusters = 24;
  std::size_t max_user_clusters = 3;
  double noise_ratio = 0.9;
  std::size_t tags_per_item = 3;
  std::size_t tag_degree = 4;  // tag-tag neighbors drawn within the cluster
  std::size_t source_interactions = 20;  // per user per source domain
  double cold_start_share = 0.3;
  double inactive_share = 0.4;
  std::size_t active_max_train = 20;
  std::size_t validation_per_user = 2;
  std::size_t test_per_user = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0)) throw ValidationError("noise ratio must be in [0, 1]");
    if (clusters < 1) throw ValidationError("need at least one interest cluster");
    if (users == 0 || target_items == 0 || tags == 0) throw ValidationError("counts must be positive");
    if (max_user_clusters < 1 || max_user_clusters > clusters) throw ValidationError("bad max_user_clusters");
    if (source_domains < 0) throw ValidationError("source_domains must be >= 0");
    if (!(cold_start_share >= 0 && inactive_share >= 0 && cold_start_share + inactive_share <= 1.0)) {
      throw ValidationError("group shares must be non-negative and sum to at most 1");
    }
    if (active_max_train < 10) throw ValidationError("active users need at least 10 training interactions");
    const std::size_t total_clusters = clusters + noise_clusters;
    if (tags < total_clusters * std::max<std::size_t>(tags_per_item, 2)) {
      throw ValidationError("too few tags for the requested clusters");
    }
    if (target_items < clusters) throw ValidationError("fewer target items than clusters");
    const std::size_t per_cluster = target_items / clusters;
    if (active_max_train + validation_per_user + test_per_user > per_cluster) {
      throw ValidationError("infeasible: a user may need more target interactions than one cluster holds");
    }
    if (source_domains > 0 && source_items < total_clusters) throw ValidationError("too few source items");
    if (noise_ratio > 0.0 && source_domains > 0 && noise_clusters == 0 && clusters == max_user_clusters) {
      throw ValidationError("noise interactions need clusters outside every user's interests");
    }
  }
};

// Sets one SyntheticSpec field by name (the member names above).
inline void apply_spec(SyntheticSpec& s, std::string_view key, std::string_view value) {
  auto num = [&](auto& dst) {
    using T = std::remove_reference_t<decltype(dst)>;
    const auto v = detail::parse_number<T>(value);
    if (!v) throw ValidationError("bad value '" + std::string(value) + "' for " + std::string(key));
    dst = *v;
  };
  if (key == "users") num(s.users);
  else if (key == "target_items") num(s.target_items);
  else if (key == "tags") num(s.tags);
  else if (key == "source_domains") num(s.source_domains);
  else if (key == "source_items") num(s.source_items);
  else if (key == "bridges_per_item") num(s.bridges_per_item);
  else if (key == "clusters") num(s.clusters);
  else if (key == "noise_clusters") num(s.noise_clusters);
  else if (key == "max_user_clusters") num(s.max_user_clusters);
  else if (key == "noise_ratio") num(s.noise_ratio);
  else if (key == "tags_per_item") num(s.tags_per_item);
  else if (key == "tag_degree") num(s.tag_degree);
  else if (key == "source_interactions") num(s.source_interactions);
  else if (key == "cold_start_share") num(s.cold_start_share);
  else if (key == "inactive_share") num(s.inactive_share);
  else if (key == "active_max_train") num(s.active_max_train);
  else if (key == "validation_per_user") num(s.validation_per_user);
  else if (key == "test_per_user") num(s.test_per_user);
  else if (key == "seed") num(s.seed);
  else throw ValidationError("unknown synthetic spec key '" + std::string(key) + "'");
}

struct SyntheticTruth {
  std::vector<std::size_t> tag_cluster;  // clusters >= spec.clusters are noise clusters
  std::vector<std::vector<std::size_t>> user_clusters;
  std::vector<std::size_t> target_item_cluster;
  std::vector<std::vector<std::size_t>> source_item_cluster;  // [domain-1][item]
  std::vector<std::vector<Index>> user_source_items;          // flattened over domains, for inspection
  std::vector<std::vector<std::size_t>> user_source_item_clusters;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::map<EdgeType, EdgeList> edges;
  Interactions train, validation, test;
  SyntheticTruth truth;
  std::size_t clusters = 0;

  Dataset build() const { return build_dataset(manifest, edges, train, validation, test); }
};

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed({spec.seed, 0x5e7ULL}));
  SyntheticDataset out;
  out.clusters = spec.clusters;
  auto& truth = out.truth;
  const std::size_t total_clusters = spec.clusters + spec.noise_clusters;

  // Tags: contiguous equal blocks per cluster.
  std::vector<std::vector<Index>> cluster_tags(total_clusters);
  truth.tag_cluster.resize(spec.tags);
  for (Index t = 0; t < spec.tags; ++t) {
    const std::size_t c = t * total_clusters / spec.tags;
    truth.tag_cluster[t] = c;
    cluster_tags[c].push_back(t);
  }
  auto draw_tags = [&](std::size_t cluster, std::size_t n) {
    std::vector<Index> pool = cluster_tags[cluster];
    n = std::min(n, pool.size());
    for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    return pool;
  };

  auto& m = out.manifest;
  m.source_domains = spec.source_domains;
  m.train = "train.tsv";
  m.validation = "validation.tsv";
  m.test = "test.tsv";
  m.counts[NodeType::user()] = spec.users;
  m.counts[NodeType::target_item()] = spec.target_items;
  m.counts[NodeType::tag()] = spec.tags;

  // Tag-tag edges inside each cluster.
  EdgeList tt;
  std::set<std::pair<Index, Index>> seen;
  for (const auto& members : cluster_tags) {
    if (members.size() < 2) continue;
    for (Index t : members) {
      for (std::size_t k = 0; k < spec.tag_degree; ++k) {
        const Index o = members[rng.below(members.size())];
        if (o == t) continue;
        const auto key = std::minmax(t, o);
        if (seen.insert(key).second) tt.emplace_back(key.first, key.second);
      }
    }
  }

  // Target items: balanced cluster assignment.
  std::vector<std::vector<Index>> cluster_items(spec.clusters);
  truth.target_item_cluster.resize(spec.target_items);
  EdgeList item_tags;
  for (Index i = 0; i < spec.target_items; ++i) {
    const std::size_t c = i % spec.clusters;
    truth.target_item_cluster[i] = c;
    cluster_items[c].push_back(i);
    for (Index t : draw_tags(c, spec.tags_per_item)) item_tags.emplace_back(i, t);
  }

  // Source domains.
  std::vector<std::vector<std::vector<Index>>> source_by_cluster(spec.source_domains);
  truth.source_item_cluster.resize(spec.source_domains);
  std::vector<EdgeList> user_source(spec.source_domains);
  for (int k = 1; k <= spec.source_domains; ++k) {
    const auto item_type = NodeType::source_item(static_cast<std::uint16_t>(k));
    m.counts[item_type] = spec.source_items;
    auto& by_cluster = source_by_cluster[k - 1];
    by_cluster.assign(total_clusters, {});
    auto& clusters_of = truth.source_item_cluster[k - 1];
    clusters_of.resize(spec.source_items);
    EdgeList to_tag, to_bridge, bridge_tag;
    const bool bridged = k >= 2 && spec.bridges_per_item > 0;
    const std::size_t bridges = spec.source_items * spec.bridges_per_item;
    for (Index i = 0; i < spec.source_items; ++i) {
      const std::size_t c = i % total_clusters;
      clusters_of[i] = c;
      by_cluster[c].push_back(i);
      if (!bridged) {
        for (Index t : draw_tags(c, spec.tags_per_item)) to_tag.emplace_back(i, t);
      } else {
        for (std::size_t b = 0; b < spec.bridges_per_item; ++b) {
          const auto bi = static_cast<Index>(i * spec.bridges_per_item + b);
          to_bridge.emplace_back(i, bi);
          for (Index t : draw_tags(c, spec.tags_per_item)) bridge_tag.emplace_back(bi, t);
        }
      }
    }
    const std::string si = to_string(item_type);
    if (!bridged) {
      m.edges.push_back({EdgeType::between(item_type, NodeType::tag()), si + "-tag.tsv"});
      out.edges[m.edges.back().type] = std::move(to_tag);
    } else {
      const auto bridge_type = NodeType::bridge(static_cast<std::uint16_t>(k));
      m.counts[bridge_type] = bridges;
      m.edges.push_back({EdgeType::between(item_type, bridge_type), si + "-" + to_string(bridge_type) + ".tsv"});
      out.edges[m.edges.back().type] = std::move(to_bridge);
      m.edges.push_back({EdgeType::between(bridge_type, NodeType::tag()), to_string(bridge_type) + "-tag.tsv"});
      out.edges[m.edges.back().type] = std::move(bridge_tag);
    }
    m.edges.push_back({EdgeType::between(NodeType::user(), item_type), "user-" + si + ".tsv"});
  }
  m.edges.push_back({EdgeType::item_tag(), "target_item-tag.tsv"});
  out.edges[EdgeType::item_tag()] = std::move(item_tags);
  m.edges.push_back({EdgeType::tag_tag(), "tag-tag.tsv"});
  out.edges[EdgeType::tag_tag()] = std::move(tt);

  // Users.
  truth.user_clusters.resize(spec.users);
  truth.user_source_items.resize(spec.users);
  truth.user_source_item_clusters.resize(spec.users);
  for (Index u = 0; u < spec.users; ++u) {
    const std::size_t nc = 1 + rng.below(spec.max_user_clusters);
    std::vector<std::size_t> all(spec.clusters);
    for (std::size_t c = 0; c < spec.clusters; ++c) all[c] = c;
    for (std::size_t i = 0; i < nc; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    std::vector<std::size_t> mine(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nc));
    std::sort(mine.begin(), mine.end());
    truth.user_clusters[u] = mine;
    auto liked = [&](std::size_t c) { return std::binary_search(mine.begin(), mine.end(), c); };

    // Target interactions.
    const double g = rng.uniform();
    std::size_t n_train = 0;
    if (g < spec.cold_start_share) n_train = 0;
    else if (g < spec.cold_start_share + spec.inactive_share) n_train = 1 + rng.below(9);
    else n_train = 10 + rng.below(spec.active_max_train - 10 + 1);
    const std::size_t n_total = n_train + spec.validation_per_user + spec.test_per_user;
    std::vector<Index> pool;
    for (auto c : mine) pool.insert(pool.end(), cluster_items[c].begin(), cluster_items[c].end());
    for (std::size_t i = 0; i < n_total; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    for (std::size_t i = 0; i < n_total; ++i) {
      const Interaction x{u, pool[i]};
      if (i < spec.test_per_user) out.test.push_back(x);
      else if (i < spec.test_per_user + spec.validation_per_user) out.validation.push_back(x);
      else out.train.push_back(x);
    }

    // Source interactions.
    for (int k = 1; k <= spec.source_domains; ++k) {
      const auto& by_cluster = source_by_cluster[k - 1];
      std::set<Index> chosen;
      for (std::size_t n = 0; n < spec.source_interactions; ++n) {
        std::size_t c;
        if (rng.bernoulli(spec.noise_ratio)) {
          if (spec.noise_clusters > 0) {
            c = spec.clusters + rng.below(spec.noise_clusters);
          } else {
            do c = rng.below(spec.clusters);
            while (liked(c));
          }
        } else {
          c = mine[rng.below(mine.size())];
        }
        const auto& items = by_cluster[c];
        const Index item = items[rng.below(items.size())];
        if (!chosen.insert(item).second) continue;
        user_source[k - 1].emplace_back(u, item);
        truth.user_source_items[u].push_back(item);
        truth.user_source_item_clusters[u].push_back(c);
      }
    }
  }
  for (int k = 1; k <= spec.source_domains; ++k) {
    out.edges[EdgeType::between(NodeType::user(), NodeType::source_item(static_cast<std::uint16_t>(k)))] =
        std::move(user_source[k - 1]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());

  // Metapaths: target first, then one per source domain.
  int id = 0;
  m.metapaths.emplace_back(id++, std::vector<NodeType>{NodeType::user(), NodeType::target_item(), NodeType::tag()});
  for (int k = 1; k <= spec.source_domains; ++k) {
    const auto item_type = NodeType::source_item(static_cast<std::uint16_t>(k));
    if (k >= 2 && spec.bridges_per_item > 0) {
      m.metapaths.emplace_back(id++, std::vector<NodeType>{NodeType::user(), item_type,
                                                           NodeType::bridge(static_cast<std::uint16_t>(k)),
                                                           NodeType::tag()});
    } else {
      m.metapaths.emplace_back(id++, std::vector<NodeType>{NodeType::user(), item_type, NodeType::tag()});
    }
  }
  return out;
}

// Ground truth as TSV: `tag <t> <cluster> <interest|noise>`, `user <u> <c1,c2,..>`,
// `target_item <i> <cluster>`, `source_item.k <i> <cluster>`.
inline std::string write_truth(const SyntheticDataset& ds) {
  std::ostringstream os;
  const auto& t = ds.truth;
  for (std::size_t i = 0; i < t.tag_cluster.size(); ++i) {
    os << "tag\t" << i << '\t' << t.tag_cluster[i] << '\t' << (t.tag_cluster[i] < ds.clusters ? "interest" : "noise")
       << '\n';
  }
  for (std::size_t u = 0; u < t.user_clusters.size(); ++u) {
    os << "user\t" << u << '\t';
    for (std::size_t j = 0; j < t.user_clusters[u].size(); ++j) os << (j ? "," : "") << t.user_clusters[u][j];
    os << '\n';
  }
  for (std::size_t i = 0; i < t.target_item_cluster.size(); ++i) os << "target_item\t" << i << '\t' << t.target_item_cluster[i] << '\n';
  for (std::size_t k = 0; k < t.source_item_cluster.size(); ++k)
    for (std::size_t i = 0; i < t.source_item_cluster[k].size(); ++i)
      os << "source_item." << k + 1 << '\t' << i << '\t' << t.source_item_cluster[k][i] << '\n';
  return os.str();
}

inline std::filesystem::path write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  const auto manifest = save_dataset(dir, ds.manifest, ds.edges, ds.train, ds.validation, ds.test);
  write_text_file(dir / "clusters.tsv", write_truth(ds));
  return manifest;
}

}  // namespace m2gnn
