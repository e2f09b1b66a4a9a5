#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/autodiff.hpp"
#include "coin/encoder.hpp"
#include "coin/graph.hpp"
#include "coin/objectives.hpp"
#include "coin/trainer.hpp"

namespace coin {

// ---- edge features and the link classifier ----

enum class FeatureMode { hadamard, concat };

inline FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "hadamard") return FeatureMode::hadamard;
  if (s == "concat") return FeatureMode::concat;
  throw std::invalid_argument("unknown feature mode: " + s + " (want hadamard|concat)");
}

inline std::size_t feature_width(std::size_t d, FeatureMode mode) {
  return mode == FeatureMode::hadamard ? d : 2 * d;
}

inline void edge_features(const double* u, const double* v, std::size_t d, FeatureMode mode,
                          double* out) {
  if (mode == FeatureMode::hadamard) {
    for (std::size_t i = 0; i < d; ++i) out[i] = u[i] * v[i];
  } else {
    std::copy(u, u + d, out);
    std::copy(v, v + d, out + d);
  }
}

inline Tensor edge_features(const Tensor& u_row, const Tensor& v_row,
                            FeatureMode mode = FeatureMode::hadamard) {
  if (u_row.numel() != v_row.numel())
    throw std::invalid_argument("edge_features: width mismatch " + u_row.shape_str() + " vs " +
                                v_row.shape_str());
  Tensor out(1, feature_width(u_row.numel(), mode));
  edge_features(u_row.data(), v_row.data(), u_row.numel(), mode, out.data());
  return out;
}

struct LinkClassifier {
  Tensor w;  // 1 x f
  double bias = 0.0;
  double l2 = 0.0;

  double decision(const double* x) const {
    double z = bias;
    for (std::size_t i = 0; i < w.numel(); ++i) z += w[i] * x[i];
    return z;
  }
  double predict_proba(const double* x) const { return Tape::stable_sigmoid(decision(x)); }

  // Mean negative log-likelihood plus the l2 penalty (bias excluded).
  double loss(const Tensor& xs, const std::vector<int>& ys) const {
    double nll = 0.0;
    for (std::size_t i = 0; i < xs.rows(); ++i) {
      double z = decision(xs.row(i));
      // -ln sigma(z) = softplus(-z); label 0 flips the sign of z
      double sz = ys[i] == 1 ? -z : z;
      nll += sz >= 0.0 ? sz + std::log1p(std::exp(-sz)) : std::log1p(std::exp(sz));
    }
    double reg = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) reg += w[i] * w[i];
    return nll / static_cast<double>(xs.rows()) + 0.5 * l2 * reg;
  }
};

// Deterministic full-batch gradient descent from zero init on the mean
// regularized log-likelihood; the bias carries no penalty.
inline LinkClassifier fit_logistic(const Tensor& xs, const std::vector<int>& ys, double l2 = 1e-4,
                                   std::size_t iterations = 500, double lr = 0.5) {
  if (xs.rows() == 0 || xs.rows() != ys.size())
    throw std::invalid_argument("fit_logistic: feature/label count mismatch");
  bool has0 = false, has1 = false;
  for (int y : ys) {
    if (y == 0) has0 = true;
    else if (y == 1) has1 = true;
    else throw std::invalid_argument("fit_logistic: labels must be 0 or 1");
  }
  if (!has0 || !has1) throw std::invalid_argument("fit_logistic: need both classes present");
  if (l2 < 0.0) throw std::invalid_argument("fit_logistic: l2 must be nonnegative");

  std::size_t n = xs.rows(), f = xs.cols();
  LinkClassifier clf{Tensor(1, f), 0.0, l2};
  Tensor gw(1, f);
  double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t j = 0; j < f; ++j) gw[j] = l2 * clf.w[j];
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = xs.row(i);
      double r = (clf.predict_proba(x) - static_cast<double>(ys[i])) * inv_n;
      for (std::size_t j = 0; j < f; ++j) gw[j] += r * x[j];
      gb += r;
    }
    for (std::size_t j = 0; j < f; ++j) clf.w[j] -= lr * gw[j];
    clf.bias -= lr * gb;
  }
  return clf;
}

// ---- threshold-free classification metrics ----

// Concordant-pair fraction with ties worth 0.5, via the rank-sum identity.
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auc_roc: bad input sizes");
  std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average rank
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) {
        rank_sum_pos += mid_rank;
        ++n_pos;
      }
    i = j;
  }
  std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc_roc: need both classes present");
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Step-wise average precision over the descending-score ranking; ties broken
// by original index so the value is deterministic.
inline double auc_pr(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auc_pr: bad input sizes");
  std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  if (n_pos == 0 || n_pos == n) throw std::invalid_argument("auc_pr: need both classes present");
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[idx[k]] == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

// ---- top-K ranking ----

enum class ScoreMode { scorer, dot };

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "scorer") return ScoreMode::scorer;
  if (s == "dot") return ScoreMode::dot;
  throw std::invalid_argument("unknown scoring mode: " + s + " (want scorer|dot)");
}

// Scores one user against every item. For the learned scorer the item half
// of w1 is folded into a per-item matrix once, so a user costs O(|V| d).
struct CandidateScorer {
  const Tensor* emb_u;
  const Tensor* emb_v;
  ScoreMode mode;
  Tensor item_part;  // |V| x d = V W1_lower (scorer mode)
  Tensor w1_upper;   // d x d
  Tensor w2;         // 1 x d

  CandidateScorer(const Tensor& eu, const Tensor& ev, const ScorerParams& scorer, ScoreMode m)
      : emb_u(&eu), emb_v(&ev), mode(m) {
    if (m == ScoreMode::scorer) {
      scorer.validate();
      std::size_t d = scorer.d();
      if (eu.cols() != d || ev.cols() != d)
        throw std::invalid_argument("candidate scorer: embedding width mismatch");
      w1_upper = Tensor(d, d);
      Tensor w1_lower(d, d);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          w1_upper(i, j) = scorer.w1(i, j);
          w1_lower(i, j) = scorer.w1(d + i, j);
        }
      matmul_nn(ev, w1_lower, item_part);
      w2 = scorer.w2;
    } else if (eu.cols() != ev.cols()) {
      throw std::invalid_argument("candidate scorer: embedding width mismatch");
    }
  }

  // scores[v] for all items v
  std::vector<double> score_all(std::uint32_t u) const {
    std::size_t nv = emb_v->rows(), d = emb_u->cols();
    std::vector<double> out(nv);
    if (mode == ScoreMode::dot) {
      const double* ur = emb_u->row(u);
      for (std::size_t v = 0; v < nv; ++v) {
        const double* vr = emb_v->row(v);
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += ur[i] * vr[i];
        out[v] = s;
      }
      return out;
    }
    Tensor urow(1, d);
    std::copy(emb_u->row(u), emb_u->row(u) + d, urow.data());
    Tensor upart;
    matmul_nn(urow, w1_upper, upart);
    for (std::size_t v = 0; v < nv; ++v) {
      const double* ip = item_part.row(v);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += w2[j] * std::tanh(upart[j] + ip[j]);
      out[v] = s;
    }
    return out;
  }
};

struct RankMetrics {
  double f1 = 0.0, ndcg = 0.0, map = 0.0, mrr = 0.0;
};

// Metrics for one ranked list against a relevance set, all at cutoff k.
inline RankMetrics rank_metrics(const std::vector<std::uint32_t>& ranked,
                                const std::unordered_set<std::uint32_t>& relevant,
                                std::size_t k) {
  if (k == 0 || relevant.empty()) throw std::invalid_argument("rank_metrics: empty K or relevance");
  std::size_t upto = std::min(k, ranked.size());
  std::size_t hits = 0;
  double dcg = 0.0, ap = 0.0, mrr = 0.0;
  for (std::size_t i = 0; i < upto; ++i) {
    if (relevant.count(ranked[i])) {
      ++hits;
      double rank = static_cast<double>(i + 1);
      dcg += 1.0 / std::log2(rank + 1.0);
      ap += static_cast<double>(hits) / rank;
      if (mrr == 0.0) mrr = 1.0 / rank;
    }
  }
  std::size_t denom = std::min(k, relevant.size());
  double idcg = 0.0;
  for (std::size_t i = 1; i <= denom; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  double prec = static_cast<double>(hits) / static_cast<double>(k);
  double rec = static_cast<double>(hits) / static_cast<double>(relevant.size());
  RankMetrics m;
  m.f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  m.ndcg = dcg / idcg;
  m.map = ap / static_cast<double>(denom);
  m.mrr = mrr;
  return m;
}

// Candidates = every item outside u's training set, sorted by score
// descending with ties to the lower item index.
inline std::map<std::size_t, RankMetrics> rank_and_score(
    const CandidateScorer& scorer, std::uint32_t u,
    const std::unordered_set<std::uint32_t>& test_items, const BipartiteGraph& train_graph,
    const std::vector<std::size_t>& ks) {
  if (test_items.empty()) throw std::invalid_argument("rank_and_score: user has no test items");
  std::vector<double> scores = scorer.score_all(u);
  std::vector<std::uint32_t> cand;
  cand.reserve(scores.size());
  {
    auto [b, e] = train_graph.neighbors_u(u);
    const std::uint32_t* p = b;
    for (std::uint32_t v = 0; v < scores.size(); ++v) {
      if (p != e && *p == v) {
        ++p;
        continue;
      }
      cand.push_back(v);
    }
  }
  std::sort(cand.begin(), cand.end(), [&](std::uint32_t a, std::uint32_t b2) {
    if (scores[a] != scores[b2]) return scores[a] > scores[b2];
    return a < b2;
  });
  std::map<std::size_t, RankMetrics> out;
  for (std::size_t k : ks) out[k] = rank_metrics(cand, test_items, k);
  return out;
}

// ---- clustering ----

inline std::vector<int> cluster_assign(const Tensor& p) {
  std::vector<int> out(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double* row = p.row(r);
    int best = 0;
    for (std::size_t c = 1; c < p.cols(); ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

enum class NmiNorm { arithmetic, geometric };

inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth,
                  NmiNorm norm = NmiNorm::arithmetic) {
  if (pred.empty() || pred.size() != truth.size())
    throw std::invalid_argument("nmi: labelings must be nonempty and equally long");
  std::map<std::pair<int, int>, std::size_t> cont;
  std::map<int, std::size_t> ca, cb;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++cont[{pred[i], truth[i]}];
    ++ca[pred[i]];
    ++cb[truth[i]];
  }
  double n = static_cast<double>(pred.size());
  double hu = 0.0, hv = 0.0, mi = 0.0;
  for (auto& [k, c] : ca) {
    double p = static_cast<double>(c) / n;
    hu -= p * std::log(p);
  }
  for (auto& [k, c] : cb) {
    double p = static_cast<double>(c) / n;
    hv -= p * std::log(p);
  }
  for (auto& [kl, c] : cont) {
    double pj = static_cast<double>(c) / n;
    double pk = static_cast<double>(ca[kl.first]) / n;
    double pl = static_cast<double>(cb[kl.second]) / n;
    mi += pj * std::log(pj / (pk * pl));
  }
  if (hu == 0.0 && hv == 0.0) return 1.0;  // two constant labelings
  if (hu == 0.0 || hv == 0.0) return 0.0;
  double denom = norm == NmiNorm::arithmetic ? 0.5 * (hu + hv) : std::sqrt(hu * hv);
  return mi / denom;
}

// ---- mutual-information difference identity ----

struct MiDifference {
  double i_uv = 0.0, i_kl = 0.0, d_kl = 0.0, residual = 0.0;
};

// For p(k,l,u,v) = p(u,v) p(k|u) p(l|v) and q = p(k,l) p(u|k) p(v|l), checks
// I(U;V) - I(K;L) = KL(p || q). Exact summation, zero-probability tuples
// skipped; sizes are expected to be small.
inline MiDifference verify_mi_difference(const Tensor& p_uv, const Tensor& p_k_given_u,
                                         const Tensor& p_l_given_v) {
  std::size_t nu = p_uv.rows(), nv = p_uv.cols();
  std::size_t nk = p_k_given_u.cols(), nl = p_l_given_v.cols();
  if (p_k_given_u.rows() != nu || p_l_given_v.rows() != nv)
    throw std::invalid_argument("verify_mi_difference: conditional shapes do not match the joint");
  double mass = 0.0;
  for (std::size_t i = 0; i < p_uv.numel(); ++i) {
    if (p_uv[i] < 0.0) throw std::invalid_argument("verify_mi_difference: negative probability");
    mass += p_uv[i];
  }
  if (std::fabs(mass - 1.0) > 1e-9)
    throw std::invalid_argument("verify_mi_difference: p(u,v) mass is not 1");
  auto check_rows = [](const Tensor& t, const char* what) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (t(r, c) < 0.0)
          throw std::invalid_argument(std::string("verify_mi_difference: negative entry in ") +
                                      what);
        s += t(r, c);
      }
      if (std::fabs(s - 1.0) > 1e-9)
        throw std::invalid_argument(std::string("verify_mi_difference: ") + what +
                                    " rows must sum to 1");
    }
  };
  check_rows(p_k_given_u, "p(k|u)");
  check_rows(p_l_given_v, "p(l|v)");

  std::vector<double> pu(nu, 0.0), pv(nv, 0.0);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      pu[u] += p_uv(u, v);
      pv[v] += p_uv(u, v);
    }

  MiDifference out;
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      double p = p_uv(u, v);
      if (p > 0.0) out.i_uv += p * std::log(p / (pu[u] * pv[v]));
    }

  Tensor pkl(nk, nl);
  std::vector<double> pk(nk, 0.0), pl(nl, 0.0);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      double p = p_uv(u, v);
      if (p == 0.0) continue;
      for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t l = 0; l < nl; ++l) pkl(k, l) += p * p_k_given_u(u, k) * p_l_given_v(v, l);
    }
  for (std::size_t k = 0; k < nk; ++k)
    for (std::size_t l = 0; l < nl; ++l) {
      pk[k] += pkl(k, l);
      pl[l] += pkl(k, l);
    }
  for (std::size_t k = 0; k < nk; ++k)
    for (std::size_t l = 0; l < nl; ++l)
      if (pkl(k, l) > 0.0) out.i_kl += pkl(k, l) * std::log(pkl(k, l) / (pk[k] * pl[l]));

  // p(u|k) = pu(u) p(k|u) / p(k); p(v|l) likewise
  for (std::size_t k = 0; k < nk; ++k)
    for (std::size_t l = 0; l < nl; ++l)
      for (std::size_t u = 0; u < nu; ++u) {
        if (p_k_given_u(u, k) == 0.0) continue;
        for (std::size_t v = 0; v < nv; ++v) {
          double p = p_uv(u, v) * p_k_given_u(u, k) * p_l_given_v(v, l);
          if (p == 0.0) continue;
          double q = pkl(k, l) * (pu[u] * p_k_given_u(u, k) / pk[k]) *
                     (pv[v] * p_l_given_v(v, l) / pl[l]);
          out.d_kl += p * std::log(p / q);
        }
      }
  out.residual = std::fabs(out.i_uv - out.i_kl - out.d_kl);
  return out;
}

// ---- protocol drivers ----

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_std: empty sample");
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

struct MetricsReport {
  std::string task, dataset;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::pair<double, double>> metrics;  // name -> (mean, std)
  std::size_t skipped_users = 0;

  nlohmann::json to_json() const {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [name, ms] : metrics) m[name] = {{"mean", ms.first}, {"std", ms.second}};
    return {{"task", task},
            {"dataset", dataset},
            {"seeds", seeds},
            {"metrics", m},
            {"skipped_users", skipped_users}};
  }
};

struct LinkEvalOptions {
  FeatureMode feature = FeatureMode::hadamard;
  double l2 = 1e-4;
  std::size_t iterations = 500;
  double lr = 0.5;
  std::uint64_t seed = 1;  // classifier negative sampling
};

struct LinkEvalResult {
  double auc_roc = 0.0, auc_pr = 0.0;
};

// Classifier setup: positives = training edges; equally many negatives drawn
// from pairs that are neither training nor test-positive edges. Test scores
// come from the fitted classifier on the held-out positives and negatives.
inline LinkEvalResult evaluate_link(Model& model, const BipartiteGraph& train_graph,
                                    const BipartiteGraph& full_graph, const DatasetSplit& split,
                                    const LinkEvalOptions& opts = {}) {
  EmbeddingPair emb = encode(train_graph, model.encoder, model.init);
  std::size_t d = emb.u.cols();
  std::size_t f = feature_width(d, opts.feature);

  RngStream rng = RngStream::derive(opts.seed, "link-negatives");
  std::size_t n_pos = train_graph.edges.size();
  Tensor xs(2 * n_pos, f);
  std::vector<int> ys(2 * n_pos);
  for (std::size_t i = 0; i < n_pos; ++i) {
    auto [u, v] = train_graph.edges[i];
    edge_features(emb.u.row(u), emb.v.row(v), d, opts.feature, xs.row(i));
    ys[i] = 1;
  }
  for (std::size_t i = 0; i < n_pos; ++i) {
    for (;;) {
      std::uint32_t u = static_cast<std::uint32_t>(rng.uniform_int(full_graph.num_u));
      std::uint32_t v = static_cast<std::uint32_t>(rng.uniform_int(full_graph.num_v));
      if (full_graph.has_edge(u, v)) continue;  // excludes train and test positives
      edge_features(emb.u.row(u), emb.v.row(v), d, opts.feature, xs.row(n_pos + i));
      ys[n_pos + i] = 0;
      break;
    }
  }
  LinkClassifier clf = fit_logistic(xs, ys, opts.l2, opts.iterations, opts.lr);

  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(split.test_pos.size() + split.test_neg.size());
  Tensor feat(1, f);
  for (const auto& [u, v] : split.test_pos) {
    edge_features(emb.u.row(u), emb.v.row(v), d, opts.feature, feat.data());
    scores.push_back(clf.decision(feat.data()));
    labels.push_back(1);
  }
  for (const auto& [u, v] : split.test_neg) {
    edge_features(emb.u.row(u), emb.v.row(v), d, opts.feature, feat.data());
    scores.push_back(clf.decision(feat.data()));
    labels.push_back(0);
  }
  return {auc_roc(scores, labels), auc_pr(scores, labels)};
}

struct RankingEvalResult {
  std::map<std::string, double> metrics;  // e.g. "f1@10" -> value
  std::size_t skipped_users = 0;
  std::size_t evaluated_users = 0;
};

// Mean per-user ranking metrics over users holding at least one test item.
inline RankingEvalResult evaluate_ranking(
    Model& model, const BipartiteGraph& train_graph,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& test_pos,
    const std::vector<std::size_t>& ks, ScoreMode mode = ScoreMode::scorer) {
  EmbeddingPair emb = encode(train_graph, model.encoder, model.init);
  CandidateScorer scorer(emb.u, emb.v, model.scorer, mode);

  std::unordered_map<std::uint32_t, std::unordered_set<std::uint32_t>> test_items;
  for (const auto& [u, v] : test_pos) test_items[u].insert(v);

  std::vector<std::uint32_t> users;
  users.reserve(test_items.size());
  for (const auto& [u, items] : test_items) users.push_back(u);
  std::sort(users.begin(), users.end());

  RankingEvalResult out;
  out.skipped_users = train_graph.num_u - users.size();
  std::map<std::size_t, RankMetrics> sums;
  for (std::size_t k : ks) sums[k] = RankMetrics{};
  for (std::uint32_t u : users) {
    auto per_k = rank_and_score(scorer, u, test_items[u], train_graph, ks);
    for (std::size_t k : ks) {
      sums[k].f1 += per_k[k].f1;
      sums[k].ndcg += per_k[k].ndcg;
      sums[k].map += per_k[k].map;
      sums[k].mrr += per_k[k].mrr;
    }
    ++out.evaluated_users;
  }
  if (out.evaluated_users == 0) throw std::invalid_argument("evaluate_ranking: no evaluable users");
  double inv = 1.0 / static_cast<double>(out.evaluated_users);
  for (std::size_t k : ks) {
    std::string suff = "@" + std::to_string(k);
    out.metrics["f1" + suff] = sums[k].f1 * inv;
    out.metrics["ndcg" + suff] = sums[k].ndcg * inv;
    out.metrics["map" + suff] = sums[k].map * inv;
    out.metrics["mrr" + suff] = sums[k].mrr * inv;
  }
  return out;
}

enum class LabelSide { u, v };

// NMI of argmax cluster assignments against ground-truth labels on the
// labeled subset of one partition.
inline double evaluate_clustering(Model& model, const BipartiteGraph& graph,
                                  const LabelSet& labels, LabelSide side,
                                  NmiNorm norm = NmiNorm::arithmetic) {
  EmbeddingPair emb = encode(graph, model.encoder, model.init);
  const Tensor& e = side == LabelSide::u ? emb.u : emb.v;
  const ClusterHead& head = side == LabelSide::u ? model.heads.u : model.heads.v;
  Tensor probs = cluster_probs_plain(e, head);
  std::vector<int> assign = cluster_assign(probs);
  std::vector<int> pred, truth;
  pred.reserve(labels.labels.size());
  std::vector<std::uint32_t> nodes;
  for (const auto& [node, cls] : labels.labels) nodes.push_back(node);
  std::sort(nodes.begin(), nodes.end());
  for (std::uint32_t node : nodes) {
    if (node >= assign.size()) continue;
    pred.push_back(assign[node]);
    truth.push_back(labels.labels.at(node));
  }
  if (pred.empty()) throw std::invalid_argument("evaluate_clustering: no labeled nodes in graph");
  return nmi(pred, truth, norm);
}

}  // namespace coin
