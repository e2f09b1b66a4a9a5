#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "coin/rng.hpp"
#include "coin/tensor.hpp"

namespace coin {

// Dense reindexing of external node ids, first-seen order.
struct IdMap {
  std::vector<std::string> names;
  std::unordered_map<std::string, std::uint32_t> index;

  std::uint32_t intern(const std::string& name) {
    auto it = index.find(name);
    if (it != index.end()) return it->second;
    std::uint32_t id = static_cast<std::uint32_t>(names.size());
    names.push_back(name);
    index.emplace(name, id);
    return id;
  }
  const std::uint32_t* find(const std::string& name) const {
    auto it = index.find(name);
    return it == index.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return names.size(); }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write id map: " + path);
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
  }
};

enum class IdScheme { first_seen };

// Each nonzero row divided by its sum; zero rows stay zero.
inline SparseMatrix row_normalize(const SparseMatrix& a) {
  SparseMatrix out = a;
  for (std::size_t r = 0; r < out.rows; ++r) {
    double s = 0.0;
    for (std::uint32_t i = out.row_ptr[r]; i < out.row_ptr[r + 1]; ++i) {
      if (out.val[i] < 0.0) throw std::invalid_argument("row_normalize: negative entry");
      s += out.val[i];
    }
    if (s > 0.0)
      for (std::uint32_t i = out.row_ptr[r]; i < out.row_ptr[r + 1]; ++i) out.val[i] /= s;
  }
  return out;
}

struct BipartiteGraph {
  std::size_t num_u = 0;
  std::size_t num_v = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::shared_ptr<const SparseMatrix> adj_uv;  // |U|x|V|, row-normalized
  std::shared_ptr<const SparseMatrix> adj_vu;  // |V|x|U|, row-normalized
  IdMap u_ids, v_ids;  // empty for synthetic graphs

  static BipartiteGraph from_edges(std::size_t num_u, std::size_t num_v,
                                   std::vector<std::pair<std::uint32_t, std::uint32_t>> edges) {
    BipartiteGraph g;
    g.num_u = num_u;
    g.num_v = num_v;
    g.edges = std::move(edges);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(g.edges.size() * 2);
    for (auto [u, v] : g.edges) {
      if (u >= num_u || v >= num_v)
        throw std::invalid_argument("edge index out of range: (" + std::to_string(u) + ", " +
                                    std::to_string(v) + ")");
      if (!seen.insert((static_cast<std::uint64_t>(u) << 32) | v).second)
        throw std::invalid_argument("duplicate edge: (" + std::to_string(u) + ", " +
                                    std::to_string(v) + ")");
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> rev;
    rev.reserve(g.edges.size());
    for (auto [u, v] : g.edges) rev.emplace_back(v, u);
    g.adj_uv = std::make_shared<SparseMatrix>(
        row_normalize(SparseMatrix::from_coo(num_u, num_v, g.edges)));
    g.adj_vu =
        std::make_shared<SparseMatrix>(row_normalize(SparseMatrix::from_coo(num_v, num_u, rev)));
    return g;
  }

  std::size_t degree_u(std::uint32_t u) const {
    return adj_uv->row_ptr[u + 1] - adj_uv->row_ptr[u];
  }
  bool has_edge(std::uint32_t u, std::uint32_t v) const {
    const auto& m = *adj_uv;
    const std::uint32_t* b = m.col_idx.data() + m.row_ptr[u];
    const std::uint32_t* e = m.col_idx.data() + m.row_ptr[u + 1];
    return std::binary_search(b, e, v);
  }
  // Sorted neighbor item indices of u.
  std::pair<const std::uint32_t*, const std::uint32_t*> neighbors_u(std::uint32_t u) const {
    const auto& m = *adj_uv;
    return {m.col_idx.data() + m.row_ptr[u], m.col_idx.data() + m.row_ptr[u + 1]};
  }
};

// Lines: "u_id <tab> v_id [<tab> rating [...]]"; '#' comments and blank lines
// skipped; extra fields ignored; duplicate edges collapsed to the first.
inline BipartiteGraph load_edge_list(const std::string& path,
                                     IdScheme scheme = IdScheme::first_seen) {
  (void)scheme;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open edge list: " + path);
  BipartiteGraph g;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ss(line);
    std::string ut, vt;
    if (!(ss >> ut >> vt))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected \"u<TAB>v\"");
    std::uint32_t u = g.u_ids.intern(ut);
    std::uint32_t v = g.v_ids.intern(vt);
    if (seen.insert((static_cast<std::uint64_t>(u) << 32) | v).second) g.edges.emplace_back(u, v);
  }
  if (g.edges.empty()) throw std::runtime_error("edge list has no edges: " + path);
  IdMap u_ids = std::move(g.u_ids), v_ids = std::move(g.v_ids);
  g = BipartiteGraph::from_edges(u_ids.size(), v_ids.size(), std::move(g.edges));
  g.u_ids = std::move(u_ids);
  g.v_ids = std::move(v_ids);
  return g;
}

// `count` independent uniform draws from V \ neighbors(u).
inline std::vector<std::uint32_t> sample_negatives(std::uint32_t u, std::size_t count,
                                                   const BipartiteGraph& graph, RngStream& rng) {
  std::size_t deg = graph.degree_u(u);
  if (deg >= graph.num_v)
    throw std::runtime_error("node u=" + std::to_string(u) + " is connected to every v");
  std::vector<std::uint32_t> out;
  out.reserve(count);
  if (deg * 2 >= graph.num_v) {
    // dense row: enumerate the complement once
    auto [b, e] = graph.neighbors_u(u);
    std::vector<std::uint32_t> pool;
    pool.reserve(graph.num_v - deg);
    const std::uint32_t* p = b;
    for (std::uint32_t v = 0; v < graph.num_v; ++v) {
      if (p != e && *p == v) {
        ++p;
        continue;
      }
      pool.push_back(v);
    }
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(pool[rng.uniform_int(pool.size())]);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      for (;;) {
        std::uint32_t v = static_cast<std::uint32_t>(rng.uniform_int(graph.num_v));
        if (!graph.has_edge(u, v)) {
          out.push_back(v);
          break;
        }
      }
    }
  }
  return out;
}

struct DatasetSplit {
  BipartiteGraph train;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> test_pos;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> test_neg;
};

// Uniform edge partition; |train| = floor(train_fraction * |E|). Node counts
// and id maps carry over so embeddings stay aligned. Test negatives are
// distinct non-edges of the full graph.
inline DatasetSplit make_split(const BipartiteGraph& graph, double train_fraction,
                               double neg_ratio, RngStream& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  if (neg_ratio < 0.0) throw std::invalid_argument("neg_ratio must be nonnegative");
  std::size_t n = graph.edges.size();
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  std::size_t n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(n));
  if (n_train == 0 || n_train == n)
    throw std::invalid_argument("split leaves an empty partition (|E|=" + std::to_string(n) +
                                ", fraction=" + std::to_string(train_fraction) + ")");
  std::vector<char> in_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[perm[i]] = 1;

  DatasetSplit split;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> train_edges;
  train_edges.reserve(n_train);
  for (std::size_t i = 0; i < n; ++i) {
    if (in_train[i])
      train_edges.push_back(graph.edges[i]);
    else
      split.test_pos.push_back(graph.edges[i]);
  }
  split.train = BipartiteGraph::from_edges(graph.num_u, graph.num_v, std::move(train_edges));
  split.train.u_ids = graph.u_ids;
  split.train.v_ids = graph.v_ids;

  std::size_t want = static_cast<std::size_t>(
      neg_ratio * static_cast<double>(split.test_pos.size()) + 0.5);
  double total = static_cast<double>(graph.num_u) * static_cast<double>(graph.num_v);
  if (static_cast<double>(want) > total - static_cast<double>(n))
    throw std::invalid_argument("not enough non-edges for requested test negatives");
  std::unordered_set<std::uint64_t> taken;
  taken.reserve(want * 2);
  split.test_neg.reserve(want);
  while (split.test_neg.size() < want) {
    std::uint32_t u = static_cast<std::uint32_t>(rng.uniform_int(graph.num_u));
    std::uint32_t v = static_cast<std::uint32_t>(rng.uniform_int(graph.num_v));
    if (graph.has_edge(u, v)) continue;
    if (!taken.insert((static_cast<std::uint64_t>(u) << 32) | v).second) continue;
    split.test_neg.emplace_back(u, v);
  }
  return split;
}

// Uniform distribution over training edges: mass 1/z on each, z = |E_train|.
struct EdgePrior {
  std::size_t z = 0;
  const BipartiteGraph* support = nullptr;

  explicit EdgePrior(const BipartiteGraph& train) : z(train.edges.size()), support(&train) {
    if (z == 0) throw std::invalid_argument("edge prior over an empty edge set");
  }
  double mass(std::uint32_t u, std::uint32_t v) const {
    return support->has_edge(u, v) ? 1.0 / static_cast<double>(z) : 0.0;
  }
  // |U|x|V| sparse matrix with 1/z at each training edge.
  SparseMatrix matrix() const {
    std::vector<double> vals(z, 1.0 / static_cast<double>(z));
    return SparseMatrix::from_coo(support->num_u, support->num_v, support->edges, &vals);
  }
};

struct LabelSet {
  std::unordered_map<std::uint32_t, int> labels;  // dense node index -> class
  int num_classes = 0;
  std::vector<std::string> class_names;  // first-seen order
  std::size_t num_unmatched = 0;         // file ids absent from the id map
};

// Lines: "node_id <tab> class_id"; ids resolved through the given partition
// map, unmatched ids counted and skipped; class tokens densified first-seen.
inline LabelSet load_label_file(const std::string& path, const IdMap& ids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file: " + path);
  LabelSet ls;
  std::unordered_map<std::string, int> class_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ss(line);
    std::string nt, ct;
    if (!(ss >> nt >> ct))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected \"node<TAB>class\"");
    const std::uint32_t* idx = ids.find(nt);
    if (!idx) {
      ++ls.num_unmatched;
      continue;
    }
    auto [it, fresh] = class_index.emplace(ct, static_cast<int>(class_index.size()));
    if (fresh) ls.class_names.push_back(ct);
    ls.labels[*idx] = it->second;
  }
  ls.num_classes = static_cast<int>(class_index.size());
  if (ls.labels.empty()) throw std::runtime_error("label file matched no nodes: " + path);
  return ls;
}

}  // namespace coin
