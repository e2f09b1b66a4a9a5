#pragma once

// Independent oracles for the test suite: naive dense linear algebra and
// direct-formula evaluations that deliberately avoid the library kernels.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "coin/encoder.hpp"
#include "coin/graph.hpp"
#include "coin/objectives.hpp"
#include "coin/tensor.hpp"

namespace oracle {

using coin::Tensor;

inline Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline Tensor transpose_naive(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Dense row-normalized adjacency built directly from the edge list.
inline Tensor dense_adjacency(std::size_t rows, std::size_t cols,
                              const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                              bool transpose_pairs) {
  Tensor a(rows, cols);
  for (auto [u, v] : edges) {
    if (transpose_pairs)
      a(v, u) = 1.0;
    else
      a(u, v) = 1.0;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a(r, c);
    if (s > 0.0)
      for (std::size_t c = 0; c < cols; ++c) a(r, c) /= s;
  }
  return a;
}

// Straight-line dense evaluation of the message-passing stack, no autodiff,
// no sparse kernels.
inline coin::EmbeddingPair encode_dense(const coin::BipartiteGraph& g,
                                        const coin::EncoderParams& params,
                                        const coin::EmbeddingPair& init) {
  Tensor a_uv = dense_adjacency(g.num_u, g.num_v, g.edges, false);
  Tensor a_vu = dense_adjacency(g.num_v, g.num_u, g.edges, true);
  Tensor u = init.u, v = init.v;
  auto lrelu = [&](Tensor t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      if (t[i] <= 0.0) t[i] *= params.leaky_slope;
    return t;
  };
  auto tanh_all = [](Tensor t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::tanh(t[i]);
    return t;
  };
  auto concat = [](const Tensor& l, const Tensor& r) {
    Tensor out(l.rows(), l.cols() + r.cols());
    for (std::size_t i = 0; i < l.rows(); ++i) {
      for (std::size_t j = 0; j < l.cols(); ++j) out(i, j) = l(i, j);
      for (std::size_t j = 0; j < r.cols(); ++j) out(i, l.cols() + j) = r(i, j);
    }
    return out;
  };
  for (const auto& layer : params.layers) {
    Tensor mv = lrelu(matmul_naive(matmul_naive(a_vu, u), layer.w1));
    Tensor vhat = tanh_all(matmul_naive(concat(mv, v), layer.w2));
    Tensor mu = lrelu(matmul_naive(matmul_naive(a_uv, vhat), layer.w3));
    u = tanh_all(matmul_naive(concat(mu, u), layer.w4));
    v = vhat;
  }
  return {u, v};
}

// Quadruple loop over (k, l, u, v) with the dense prior matrix.
inline Tensor joint_bruteforce(const Tensor& p_u, const Tensor& p_v,
                               const coin::BipartiteGraph& train) {
  double z = static_cast<double>(train.edges.size());
  Tensor prior(train.num_u, train.num_v);
  for (auto [u, v] : train.edges) prior(u, v) = 1.0 / z;
  Tensor joint(p_u.cols(), p_v.cols());
  for (std::size_t k = 0; k < p_u.cols(); ++k)
    for (std::size_t l = 0; l < p_v.cols(); ++l)
      for (std::size_t u = 0; u < train.num_u; ++u)
        for (std::size_t v = 0; v < train.num_v; ++v)
          joint(k, l) += prior(u, v) * p_u(u, k) * p_v(v, l);
  return joint;
}

inline double mi_direct(const Tensor& joint) {
  std::vector<double> mk(joint.rows(), 0.0), ml(joint.cols(), 0.0);
  for (std::size_t k = 0; k < joint.rows(); ++k)
    for (std::size_t l = 0; l < joint.cols(); ++l) {
      mk[k] += joint(k, l);
      ml[l] += joint(k, l);
    }
  double mi = 0.0;
  for (std::size_t k = 0; k < joint.rows(); ++k)
    for (std::size_t l = 0; l < joint.cols(); ++l)
      if (joint(k, l) > 0.0) mi += joint(k, l) * std::log(joint(k, l) / (mk[k] * ml[l]));
  return mi;
}

// Direct scorer evaluation: w2 . tanh(w1^T [u || v]).
inline double score_direct(const double* u, const double* v, const coin::ScorerParams& s) {
  std::size_t d = s.w1.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double pre = 0.0;
    for (std::size_t i = 0; i < d; ++i) pre += s.w1(i, j) * u[i] + s.w1(d + i, j) * v[i];
    total += s.w2(0, j) * std::tanh(pre);
  }
  return total;
}

// Literal instance objective via the raw exponential ratio.
inline double instance_loss_naive(const Tensor& emb_u, const Tensor& emb_v,
                                  const coin::ScorerParams& s,
                                  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pos,
                                  const std::vector<std::uint32_t>& neg, bool log_form) {
  double total = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    double sp = score_direct(emb_u.row(pos[i].first), emb_v.row(pos[i].second), s);
    double sn = score_direct(emb_u.row(pos[i].first), emb_v.row(neg[i]), s);
    double term = std::exp(sp) / (std::exp(sp) + std::exp(sn));
    total += log_form ? std::log(term) : term;
  }
  return total;
}

// O(n^2) pairwise concordance with ties worth one half.
inline double auc_roc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        concordant += 1.0;
      else if (scores[i] == scores[j])
        concordant += 0.5;
    }
  return concordant / static_cast<double>(pairs);
}

// NMI from an explicitly built contingency table.
inline double nmi_contingency(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    pab[{a[i], b[i]}] += 1.0 / n;
  }
  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (auto& [k, p] : pa) ha -= p * std::log(p);
  for (auto& [k, p] : pb) hb -= p * std::log(p);
  for (auto& [kl, p] : pab) mi += p * std::log(p / (pa[kl.first] * pb[kl.second]));
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;
  return mi / (0.5 * (ha + hb));
}

// Two planted diagonal blocks with in-block density p_in and cross-block
// noise p_out; labels = block index of each u node.
struct PlantedGraph {
  coin::BipartiteGraph graph;
  std::vector<int> u_labels;
};

inline PlantedGraph planted_blocks(std::size_t num_u, std::size_t num_v, double p_in,
                                   double p_out, std::uint64_t seed) {
  coin::RngStream rng(seed);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  PlantedGraph out;
  for (std::uint32_t u = 0; u < num_u; ++u) {
    out.u_labels.push_back(u < num_u / 2 ? 0 : 1);
    for (std::uint32_t v = 0; v < num_v; ++v) {
      bool same = (u < num_u / 2) == (v < num_v / 2);
      if (rng.uniform() < (same ? p_in : p_out)) edges.emplace_back(u, v);
    }
  }
  out.graph = coin::BipartiteGraph::from_edges(num_u, num_v, edges);
  return out;
}

inline Tensor random_stochastic(std::size_t rows, std::size_t cols, coin::RngStream& rng) {
  Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      t(r, c) = rng.uniform() + 1e-4;
      s += t(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= s;
  }
  return t;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, coin::RngStream& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto p = base / (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path = p;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir for " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name, const std::string& contents) const {
    auto p = path / name;
    std::ofstream out(p);
    out << contents;
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return p.string();
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
