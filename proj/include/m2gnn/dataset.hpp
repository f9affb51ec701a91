#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/hetero_graph.hpp"
#include "m2gnn/interactions.hpp"

namespace m2gnn {

// Keyed text manifest:
//
//   source_domains = 2
//   train = train.tsv
//   validation = validation.tsv
//   test = test.tsv
//
//   [nodes]
//   user = 300
//   target_item = 600
//   tag = 240
//   source_item.1 = 400
//
//   [edge target_item tag]
//   file = target_item-tag.tsv
//
//   [metapath 0]
//   path = user target_item tag
//
// The user -> target_item relation is the training split itself and is never
// declared as an edge file.
struct EdgeFileDecl {
  EdgeType type;
  std::string file;
};

struct DatasetManifest {
  int source_domains = 0;
  std::map<NodeType, std::size_t> counts;
  std::vector<EdgeFileDecl> edges;
  std::vector<MetapathSchema> metapaths;
  std::string train, validation, test;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const auto b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw LoadError("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    out.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

}  // namespace detail

inline DatasetManifest parse_manifest(std::string_view text, const std::string& name = "manifest") {
  DatasetManifest m;
  enum class Section { Top, Nodes, Edge, Metapath } section = Section::Top;
  std::optional<EdgeType> edge;
  int metapath_id = -1;
  std::map<int, std::vector<NodeType>> paths;
  bool have_domains = false;
  const auto lines = detail::lines_of(text);
  auto fail = [&](std::size_t line, const std::string& msg) -> LoadError {
    return LoadError(name + ":" + std::to_string(line) + ": " + msg);
  };
  auto close_edge = [&](std::size_t line) {
    if (section == Section::Edge && edge) throw fail(line, "edge section without 'file'");
  };
  for (std::size_t ln = 1; ln <= lines.size(); ++ln) {
    auto line = detail::trim(lines[ln - 1]);
    if (line.empty() || line.front() == '#') continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw fail(ln, "unterminated section header");
        close_edge(ln);
        const auto words = detail::split_ws(line.substr(1, line.size() - 2));
        if (words.size() == 1 && words[0] == "nodes") {
          section = Section::Nodes;
        } else if (words.size() == 3 && words[0] == "edge") {
          const auto src = parse_node_type(words[1]);
          const auto dst = parse_node_type(words[2]);
          if (src == NodeType::user() && dst == NodeType::target_item()) {
            throw fail(ln, "user target_item edges come from the train split, not an edge file");
          }
          edge = EdgeType::between(src, dst);
          section = Section::Edge;
        } else if (words.size() == 2 && words[0] == "metapath") {
          const auto id = detail::parse_number<int>(words[1]);
          if (!id || *id < 0) throw fail(ln, "bad metapath id");
          if (paths.count(*id)) throw fail(ln, "duplicate metapath id");
          metapath_id = *id;
          section = Section::Metapath;
        } else {
          throw fail(ln, "unknown section '" + std::string(line) + "'");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw fail(ln, "expected key = value");
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string_view value = detail::trim(line.substr(eq + 1));
      switch (section) {
        case Section::Top:
          if (key == "source_domains") {
            const auto n = detail::parse_number<int>(value);
            if (!n || *n < 0) throw fail(ln, "bad source_domains");
            m.source_domains = *n;
            have_domains = true;
          } else if (key == "train") m.train = value;
          else if (key == "validation") m.validation = value;
          else if (key == "test") m.test = value;
          else throw fail(ln, "unknown key '" + key + "'");
          break;
        case Section::Nodes: {
          const auto t = parse_node_type(key);
          const auto n = detail::parse_number<std::size_t>(value);
          if (!n) throw fail(ln, "bad node count");
          if (m.counts.count(t)) throw fail(ln, "duplicate node type " + key);
          m.counts[t] = *n;
          break;
        }
        case Section::Edge:
          if (key != "file" || !edge) throw fail(ln, "edge sections take a single 'file' key");
          m.edges.push_back({*edge, std::string(value)});
          edge.reset();
          break;
        case Section::Metapath: {
          if (key != "path") throw fail(ln, "metapath sections take a 'path' key");
          std::vector<NodeType> types;
          for (auto w : detail::split_ws(value)) types.push_back(parse_node_type(w));
          paths[metapath_id] = std::move(types);
          break;
        }
      }
    } catch (const SchemaError& e) {
      throw fail(ln, e.what());
    }
  }
  close_edge(lines.size());
  if (!have_domains) throw LoadError(name + ": missing source_domains");
  if (m.train.empty() || m.test.empty()) throw LoadError(name + ": train and test splits are required");
  for (auto t : {NodeType::user(), NodeType::target_item(), NodeType::tag()}) {
    if (!m.counts.count(t)) throw LoadError(name + ": missing node count for " + to_string(t));
  }
  for (const auto& [t, _] : m.counts) {
    if (t.has_domain() && t.domain > m.source_domains) {
      throw LoadError(name + ": node type " + to_string(t) + " exceeds source_domains");
    }
  }
  int expect = 0;
  for (auto& [id, types] : paths) {
    if (id != expect++) throw LoadError(name + ": metapath ids must be 0..n-1");
    try {
      m.metapaths.emplace_back(id, std::move(types));
    } catch (const SchemaError& e) {
      throw LoadError(name + ": metapath " + std::to_string(id) + ": " + e.what());
    }
  }
  if (m.metapaths.empty()) throw LoadError(name + ": at least one metapath is required");
  for (const auto& mp : m.metapaths) {
    for (const auto& e : mp.edges()) {
      if (e == EdgeType::user_target()) continue;
      const bool declared = std::any_of(m.edges.begin(), m.edges.end(), [&](const auto& d) { return d.type == e; });
      if (!declared) {
        throw LoadError(name + ": metapath " + std::to_string(mp.id()) + " uses undeclared edge " + to_string(e));
      }
      if (!m.counts.count(e.src) || !m.counts.count(e.dst)) {
        throw LoadError(name + ": metapath " + std::to_string(mp.id()) + " uses undeclared node type");
      }
    }
  }
  return m;
}

inline std::string write_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "source_domains = " << m.source_domains << '\n';
  os << "train = " << m.train << '\n';
  if (!m.validation.empty()) os << "validation = " << m.validation << '\n';
  os << "test = " << m.test << "\n\n[nodes]\n";
  for (const auto& [t, n] : m.counts) os << to_string(t) << " = " << n << '\n';
  for (const auto& e : m.edges) {
    os << "\n[edge " << to_string(e.type.src) << ' ' << to_string(e.type.dst) << "]\nfile = " << e.file << '\n';
  }
  for (const auto& mp : m.metapaths) os << "\n[metapath " << mp.id() << "]\npath = " << mp.describe() << '\n';
  return os.str();
}

using EdgeList = std::vector<std::pair<Index, Index>>;

// Two-column TSV of non-negative indices; errors name the file and line.
inline EdgeList parse_index_pairs(std::string_view text, const std::string& name, std::size_t src_count,
                                  std::size_t dst_count) {
  EdgeList out;
  const auto lines = detail::lines_of(text);
  for (std::size_t ln = 1; ln <= lines.size(); ++ln) {
    auto line = lines[ln - 1];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    auto fail = [&](const std::string& msg) { return LoadError(name + ":" + std::to_string(ln) + ": " + msg); };
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw fail("expected two tab-separated columns");
    }
    const auto a = detail::parse_number<Index>(line.substr(0, tab));
    const auto b = detail::parse_number<Index>(line.substr(tab + 1));
    if (!a || !b) throw fail("malformed index");
    if (*a >= src_count) throw fail("index " + std::to_string(*a) + " >= declared count " + std::to_string(src_count));
    if (*b >= dst_count) throw fail("index " + std::to_string(*b) + " >= declared count " + std::to_string(dst_count));
    out.emplace_back(*a, *b);
  }
  return out;
}

inline std::string write_index_pairs(const EdgeList& edges) {
  std::string s;
  for (const auto& [a, b] : edges) {
    s += std::to_string(a);
    s += '\t';
    s += std::to_string(b);
    s += '\n';
  }
  return s;
}

inline Interactions to_interactions(const EdgeList& e) {
  Interactions out;
  out.reserve(e.size());
  for (const auto& [u, i] : e) out.push_back({u, i});
  return out;
}

inline EdgeList to_edge_list(const Interactions& in) {
  EdgeList out;
  for (const auto& x : in) out.emplace_back(x.user, x.item);
  return out;
}

// In-memory dataset: the frozen graph (training interactions included as
// user -> target_item edges) and the three interaction splits.
struct Dataset {
  DatasetManifest manifest;
  std::shared_ptr<const HeteroGraph> graph;
  Interactions train, validation, test;
  InteractionIndex train_index, validation_index, test_index;

  std::size_t users() const { return graph->node_count(NodeType::user()); }
  std::size_t items() const { return graph->node_count(NodeType::target_item()); }
  std::size_t tags() const { return graph->node_count(NodeType::tag()); }
};

inline Dataset build_dataset(DatasetManifest manifest, const std::map<EdgeType, EdgeList>& edges, Interactions train,
                             Interactions validation, Interactions test) {
  GraphBuilder b(manifest.counts, manifest.source_domains);
  b.declare(EdgeType::user_target());
  b.declare(EdgeType::item_tag());
  b.declare(EdgeType::tag_tag());
  for (const auto& decl : manifest.edges) {
    b.declare(decl.type);
    const auto it = edges.find(decl.type);
    if (it == edges.end()) continue;
    for (const auto& [s, d] : it->second) {
      try {
        b.add_edge(decl.type, {decl.type.src, s}, {decl.type.dst, d});
      } catch (const ValidationError& e) {
        throw LoadError(decl.file + ": " + e.what());
      }
    }
  }
  for (const auto& x : train) b.add_edge(EdgeType::user_target(), {NodeType::user(), x.user}, {NodeType::target_item(), x.item});
  Dataset ds;
  ds.graph = std::make_shared<const HeteroGraph>(b.freeze());
  const auto users = manifest.counts.at(NodeType::user());
  const auto items = manifest.counts.at(NodeType::target_item());
  ds.train_index = InteractionIndex(train, users, items);
  ds.validation_index = InteractionIndex(validation, users, items);
  ds.test_index = InteractionIndex(test, users, items);
  ds.manifest = std::move(manifest);
  ds.train = std::move(train);
  ds.validation = std::move(validation);
  ds.test = std::move(test);
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  auto manifest = parse_manifest(detail::read_file(manifest_path), manifest_path.string());
  std::map<EdgeType, EdgeList> edges;
  for (const auto& decl : manifest.edges) {
    const auto path = base / decl.file;
    auto list = parse_index_pairs(detail::read_file(path), path.string(), manifest.counts.at(decl.type.src),
                                  manifest.counts.at(decl.type.dst));
    if (decl.type.symmetric) {
      for (const auto& [a, b] : list) {
        if (a == b) throw LoadError(path.string() + ": self-loop on tag " + std::to_string(a));
      }
    }
    auto& dst = edges[decl.type];
    dst.insert(dst.end(), list.begin(), list.end());
  }
  const auto users = manifest.counts.at(NodeType::user());
  const auto items = manifest.counts.at(NodeType::target_item());
  auto split = [&](const std::string& file) {
    if (file.empty()) return Interactions{};
    const auto path = base / file;
    return to_interactions(parse_index_pairs(detail::read_file(path), path.string(), users, items));
  };
  auto train = split(manifest.train);
  auto validation = split(manifest.validation);
  auto test = split(manifest.test);
  return build_dataset(std::move(manifest), edges, std::move(train), std::move(validation), std::move(test));
}

inline void write_text_file(const std::filesystem::path& p, std::string_view content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot write " + p.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw LoadError("failed writing " + p.string());
}

// Writes the manifest (as manifest.ini), every declared edge file and the splits into `dir`.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const DatasetManifest& m,
                                          const std::map<EdgeType, EdgeList>& edges, const Interactions& train,
                                          const Interactions& validation, const Interactions& test) {
  std::filesystem::create_directories(dir);
  for (const auto& decl : m.edges) {
    const auto it = edges.find(decl.type);
    write_text_file(dir / decl.file, it == edges.end() ? std::string{} : write_index_pairs(it->second));
  }
  write_text_file(dir / m.train, write_index_pairs(to_edge_list(train)));
  if (!m.validation.empty()) write_text_file(dir / m.validation, write_index_pairs(to_edge_list(validation)));
  write_text_file(dir / m.test, write_index_pairs(to_edge_list(test)));
  const auto path = dir / "manifest.ini";
  write_text_file(path, write_manifest(m));
  return path;
}

}  // namespace m2gnn
