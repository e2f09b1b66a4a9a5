#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coin/autodiff.hpp"
#include "coin/encoder.hpp"
#include "coin/graph.hpp"
#include "coin/tensor.hpp"

namespace coin {

inline constexpr double kMiEps = 1e-12;

// ---- cluster heads ----

// Stack of linear layers ending in a row softmax; hidden activations tanh.
struct ClusterHead {
  std::vector<Tensor> w;
  std::vector<Tensor> b;  // 1 x out each

  static ClusterHead init(std::size_t d, std::size_t n_out, std::size_t depth, RngStream& rng) {
    if (depth == 0) throw std::invalid_argument("cluster head depth must be >= 1");
    if (n_out < 2) throw std::invalid_argument("cluster head needs at least 2 clusters");
    ClusterHead h;
    for (std::size_t i = 0; i < depth; ++i) {
      std::size_t in = d;
      std::size_t out = (i + 1 == depth) ? n_out : d;
      h.w.push_back(xavier_uniform(in, out, rng));
      h.b.push_back(Tensor(1, out));
    }
    return h;
  }
  std::size_t n_out() const { return w.back().cols(); }
};

struct ClusterHeads {
  ClusterHead u, v;
};

struct ClusterHeadVars {
  std::vector<Var> w, b;
};

inline ClusterHeadVars to_tape(Tape& tape, const ClusterHead& h, bool trainable) {
  ClusterHeadVars vars;
  for (std::size_t i = 0; i < h.w.size(); ++i) {
    vars.w.push_back(tape.leaf(h.w[i], trainable));
    vars.b.push_back(tape.leaf(h.b[i], trainable));
  }
  return vars;
}

// Row-stochastic cluster memberships for one partition.
inline Var head_forward(Tape& tape, Var x, const ClusterHeadVars& head) {
  if (head.w.empty()) throw std::invalid_argument("cluster head has no layers");
  Var h = x;
  for (std::size_t i = 0; i < head.w.size(); ++i) {
    if (tape.value(h).cols() != tape.value(head.w[i]).rows())
      throw std::invalid_argument("cluster head width mismatch: input " +
                                  tape.value(h).shape_str() + " vs weight " +
                                  tape.value(head.w[i]).shape_str());
    h = tape.add(tape.matmul(h, head.w[i]), head.b[i]);
    if (i + 1 < head.w.size()) h = tape.tanh_op(h);
  }
  return tape.softmax_rows(h);
}

inline std::pair<Var, Var> cluster_probs(Tape& tape, Var emb_u, Var emb_v,
                                         const ClusterHeadVars& head_u,
                                         const ClusterHeadVars& head_v) {
  return {head_forward(tape, emb_u, head_u), head_forward(tape, emb_v, head_v)};
}

inline Tensor cluster_probs_plain(const Tensor& emb, const ClusterHead& head) {
  Tape tape;
  ClusterHeadVars hv = to_tape(tape, head, false);
  return tape.value(head_forward(tape, tape.leaf(emb), hv));
}

// ---- co-cluster joint and mutual information ----

struct CoClusterJoint {
  Tensor joint;       // N_K x N_L
  Tensor marginal_k;  // N_K x 1
  Tensor marginal_l;  // 1 x N_L

  void validate(double joint_tol = 1e-10, double marginal_tol = 1e-12) const {
    double total = 0.0;
    for (std::size_t i = 0; i < joint.numel(); ++i) {
      if (joint[i] < 0.0) throw std::runtime_error("co-cluster joint has a negative entry");
      total += joint[i];
    }
    if (std::fabs(total - 1.0) > joint_tol)
      throw std::runtime_error("co-cluster joint mass " + std::to_string(total) + " is not 1");
    for (std::size_t k = 0; k < joint.rows(); ++k) {
      double s = 0.0;
      for (std::size_t l = 0; l < joint.cols(); ++l) s += joint(k, l);
      if (std::fabs(s - marginal_k(k, 0)) > marginal_tol)
        throw std::runtime_error("row marginal mismatch at k=" + std::to_string(k));
    }
    for (std::size_t l = 0; l < joint.cols(); ++l) {
      double s = 0.0;
      for (std::size_t k = 0; k < joint.rows(); ++k) s += joint(k, l);
      if (std::fabs(s - marginal_l(0, l)) > marginal_tol)
        throw std::runtime_error("column marginal mismatch at l=" + std::to_string(l));
    }
  }
};

inline CoClusterJoint joint_with_marginals(Tensor joint) {
  CoClusterJoint out;
  out.marginal_k = Tensor(joint.rows(), 1);
  out.marginal_l = Tensor(1, joint.cols());
  for (std::size_t k = 0; k < joint.rows(); ++k)
    for (std::size_t l = 0; l < joint.cols(); ++l) {
      out.marginal_k(k, 0) += joint(k, l);
      out.marginal_l(0, l) += joint(k, l);
    }
  out.joint = std::move(joint);
  return out;
}

// joint = P_U^T * A * P_V with A the edge-prior matrix (mass 1/Z per edge).
inline Var co_cluster_joint(Tape& tape, Var p_u, Var p_v,
                            std::shared_ptr<const SparseMatrix> prior_matrix) {
  if (!prior_matrix || prior_matrix->nnz() == 0)
    throw std::invalid_argument("co_cluster_joint: empty prior support");
  if (tape.value(p_u).rows() != prior_matrix->rows ||
      tape.value(p_v).rows() != prior_matrix->cols)
    throw std::invalid_argument("co_cluster_joint: prior shape does not match memberships");
  return tape.matmul_tn_op(p_u, tape.spmm_op(prior_matrix, p_v));
}

inline CoClusterJoint co_cluster_joint(const Tensor& p_u, const Tensor& p_v,
                                       const EdgePrior& prior) {
  Tape tape;
  auto a = std::make_shared<SparseMatrix>(prior.matrix());
  Var j = co_cluster_joint(tape, tape.leaf(p_u), tape.leaf(p_v), a);
  return joint_with_marginals(tape.value(j));
}

// Natural-log MI with eps-clamped logs, so zero cells contribute zero.
inline double mutual_information(const CoClusterJoint& j) {
  double mi = 0.0;
  for (std::size_t k = 0; k < j.joint.rows(); ++k)
    for (std::size_t l = 0; l < j.joint.cols(); ++l) {
      double p = j.joint(k, l);
      mi += p * (std::log(std::max(p, kMiEps)) - std::log(std::max(j.marginal_k(k, 0), kMiEps)) -
                 std::log(std::max(j.marginal_l(0, l), kMiEps)));
    }
  return mi;
}

// Fused tape op: scalar MI from the joint, marginals formed internally.
// d mi / d joint[k][l] = ln j - ln mk - ln ml - 1 on the unclamped region;
// each log term loses its companion +-1/x term where the clamp is active.
inline Var mutual_information(Tape& tape, Var joint) {
  const Tensor& j = tape.value(joint);
  if (j.rows() < 1 || j.cols() < 1) throw std::invalid_argument("mutual_information: empty joint");
  CoClusterJoint cj = joint_with_marginals(j);
  double mi = mutual_information(cj);
  int id = tape.add_node(
      "mutual_information", Tensor::scalar(mi), {joint.id}, [](Tape& t, int self) {
        double g = t.grad_of(self).item();
        int pj = t.parents1(self);
        if (!t.requires_grad(pj)) return;
        const Tensor& jv = t.value_of(pj);
        CoClusterJoint c = joint_with_marginals(jv);
        Tensor& gj = t.grad_acc(pj);
        auto lterm = [](double x) {
          return x >= kMiEps ? std::log(x) + 1.0 : std::log(kMiEps);
        };
        for (std::size_t k = 0; k < jv.rows(); ++k)
          for (std::size_t l = 0; l < jv.cols(); ++l)
            gj(k, l) += g * (lterm(jv(k, l)) - lterm(c.marginal_k(k, 0)) -
                             lterm(c.marginal_l(0, l)) + 1.0);
      });
  return tape.wrap(id);
}

// ---- scorer and instance loss ----

struct ScorerParams {
  Tensor w1;  // 2d x d
  Tensor w2;  // 1 x d

  static ScorerParams init(std::size_t d, RngStream& rng) {
    return {xavier_uniform(2 * d, d, rng), xavier_uniform(1, d, rng)};
  }
  void validate() const {
    if (w2.rows() != 1 || w1.cols() != w2.cols() || w1.rows() != 2 * w1.cols())
      throw std::invalid_argument("scorer shapes must be 2d x d and 1 x d");
  }
  std::size_t d() const { return w1.cols(); }
};

struct ScorerVars {
  Var w1, w2;
};

inline ScorerVars to_tape(Tape& tape, const ScorerParams& s, bool trainable) {
  s.validate();
  return {tape.leaf(s.w1, trainable), tape.leaf(s.w2, trainable)};
}

// S(u, v) = w2 . tanh(w1^T [u || v])
inline double score(const Tensor& u_row, const Tensor& v_row, const ScorerParams& scorer) {
  scorer.validate();
  std::size_t d = scorer.d();
  if (u_row.numel() != d || v_row.numel() != d)
    throw std::invalid_argument("score: embedding width does not match scorer");
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double pre = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      pre += scorer.w1(i, j) * u_row[i] + scorer.w1(d + i, j) * v_row[i];
    s += scorer.w2(0, j) * std::tanh(pre);
  }
  return s;
}

enum class LossForm { literal, log_sigmoid };

inline LossForm parse_loss_form(const std::string& s) {
  if (s == "literal") return LossForm::literal;
  if (s == "log") return LossForm::log_sigmoid;
  throw std::invalid_argument("unknown instance loss form: " + s + " (want literal|log)");
}

namespace detail {

// Gathered scorer forward for one block of pairs: C = [u || v] rows,
// H = tanh(C w1), s = H w2^T.
inline void score_block(const Tensor& emb_u, const Tensor& emb_v,
                        const std::pair<std::uint32_t, std::uint32_t>* pairs, std::size_t n,
                        const Tensor& w1, const Tensor& w2, Tensor& c, Tensor& h, Tensor& s) {
  std::size_t d = emb_u.cols();
  c = Tensor(n, 2 * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ur = emb_u.row(pairs[i].first);
    const double* vr = emb_v.row(pairs[i].second);
    double* cr = c.row(i);
    std::copy(ur, ur + d, cr);
    std::copy(vr, vr + d, cr + d);
  }
  matmul_nn(c, w1, h);
  for (std::size_t i = 0; i < h.numel(); ++i) h[i] = std::tanh(h[i]);
  matmul_nt(h, w2, s);
}

struct InstanceBatch {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pos;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> neg;  // (u, v') aligned with pos
};

inline constexpr std::size_t kInstanceBlock = 4096;

}  // namespace detail

// Sum over pairs of e^{S(u,v)} / (e^{S(u,v)} + e^{S(u,v')}), evaluated as
// sigmoid(S(u,v) - S(u,v')); the log form sums ln sigmoid instead. Fused op:
// forward streams over fixed-size blocks and the backward pass recomputes
// them, so tape memory stays O(block * d) regardless of edge count.
inline Var instance_loss(Tape& tape, Var emb_u, Var emb_v, ScorerVars scorer,
                         std::vector<std::pair<std::uint32_t, std::uint32_t>> pos_edges,
                         std::vector<std::uint32_t> negatives, LossForm form) {
  if (pos_edges.empty()) throw std::invalid_argument("instance_loss: empty batch");
  if (negatives.size() != pos_edges.size())
    throw std::invalid_argument("instance_loss: need exactly one negative per positive");
  const Tensor& eu = tape.value(emb_u);
  const Tensor& ev = tape.value(emb_v);
  const Tensor& w1v = tape.value(scorer.w1);
  const Tensor& w2v = tape.value(scorer.w2);
  std::size_t d = eu.cols();
  if (ev.cols() != d || w1v.rows() != 2 * d || w1v.cols() != d || w2v.rows() != 1 ||
      w2v.cols() != d)
    throw std::invalid_argument("instance_loss: scorer/embedding width mismatch");
  for (std::size_t i = 0; i < pos_edges.size(); ++i) {
    if (pos_edges[i].first >= eu.rows() || pos_edges[i].second >= ev.rows() ||
        negatives[i] >= ev.rows())
      throw std::invalid_argument("instance_loss: pair index out of range");
  }

  auto batch = std::make_shared<detail::InstanceBatch>();
  batch->pos = std::move(pos_edges);
  batch->neg.reserve(batch->pos.size());
  for (std::size_t i = 0; i < batch->pos.size(); ++i)
    batch->neg.emplace_back(batch->pos[i].first, negatives[i]);

  auto term_and_dsig = [form](double delta, double* dterm) {
    double sig = Tape::stable_sigmoid(delta);
    if (form == LossForm::literal) {
      if (dterm) *dterm = sig * (1.0 - sig);
      return sig;
    }
    if (dterm) *dterm = 1.0 - sig;
    // ln sigmoid(delta), stable on both tails
    return delta >= 0.0 ? -std::log1p(std::exp(-delta)) : delta - std::log1p(std::exp(delta));
  };

  std::size_t n = batch->pos.size();
  double total = 0.0;
  {
    Tensor c, h, sp, sn;
    for (std::size_t beg = 0; beg < n; beg += detail::kInstanceBlock) {
      std::size_t len = std::min(detail::kInstanceBlock, n - beg);
      detail::score_block(eu, ev, batch->pos.data() + beg, len, w1v, w2v, c, h, sp);
      detail::score_block(eu, ev, batch->neg.data() + beg, len, w1v, w2v, c, h, sn);
      for (std::size_t i = 0; i < len; ++i)
        total += term_and_dsig(sp(i, 0) - sn(i, 0), nullptr);
    }
  }

  int id = tape.add_node(
      "instance_loss", Tensor::scalar(total),
      {emb_u.id, emb_v.id, scorer.w1.id, scorer.w2.id},
      [batch, term_and_dsig](Tape& t, int self) {
        double g = t.grad_of(self).item();
        const auto& par = t.parents_of(self);
        int pu = par[0], pv = par[1], pw1 = par[2], pw2 = par[3];
        const Tensor& eu2 = t.value_of(pu);
        const Tensor& ev2 = t.value_of(pv);
        const Tensor& w1 = t.value_of(pw1);
        const Tensor& w2 = t.value_of(pw2);
        bool need_u = t.requires_grad(pu), need_v = t.requires_grad(pv);
        bool need_w1 = t.requires_grad(pw1), need_w2 = t.requires_grad(pw2);
        std::size_t d2 = eu2.cols();
        std::size_t n2 = batch->pos.size();

        Tensor cp, hp, sp, cn, hn, sn, ds, dpre, dc;
        for (std::size_t beg = 0; beg < n2; beg += detail::kInstanceBlock) {
          std::size_t len = std::min(detail::kInstanceBlock, n2 - beg);
          detail::score_block(eu2, ev2, batch->pos.data() + beg, len, w1, w2, cp, hp, sp);
          detail::score_block(eu2, ev2, batch->neg.data() + beg, len, w1, w2, cn, hn, sn);
          ds = Tensor(len, 1);
          for (std::size_t i = 0; i < len; ++i) {
            double dterm;
            term_and_dsig(sp(i, 0) - sn(i, 0), &dterm);
            ds(i, 0) = g * dterm;  // d total / d s_pos; s_neg gets the negative
          }
          // one branch: given ds for scores of (c, h), push into w1/w2/embeddings
          auto backprop_branch = [&](const Tensor& c, const Tensor& h, double sign,
                                     const std::pair<std::uint32_t, std::uint32_t>* pairs,
                                     bool v_is_item) {
            (void)v_is_item;
            dpre = Tensor(len, d2);
            for (std::size_t i = 0; i < len; ++i) {
              double dsi = sign * ds(i, 0);
              const double* hr = h.row(i);
              double* dp = dpre.row(i);
              for (std::size_t j = 0; j < d2; ++j)
                dp[j] = dsi * w2(0, j) * (1.0 - hr[j] * hr[j]);
            }
            if (need_w2) {
              Tensor& gw2 = t.grad_acc(pw2);
              for (std::size_t i = 0; i < len; ++i) {
                double dsi = sign * ds(i, 0);
                const double* hr = h.row(i);
                for (std::size_t j = 0; j < d2; ++j) gw2(0, j) += dsi * hr[j];
              }
            }
            if (need_w1) matmul_tn(c, dpre, t.grad_acc(pw1), true);
            if (need_u || need_v) {
              matmul_nt(dpre, w1, dc);
              for (std::size_t i = 0; i < len; ++i) {
                const double* dcr = dc.row(i);
                if (need_u) {
                  double* gu = t.grad_acc(pu).row(pairs[i].first);
                  for (std::size_t j = 0; j < d2; ++j) gu[j] += dcr[j];
                }
                if (need_v) {
                  double* gv = t.grad_acc(pv).row(pairs[i].second);
                  for (std::size_t j = 0; j < d2; ++j) gv[j] += dcr[d2 + j];
                }
              }
            }
          };
          backprop_branch(cp, hp, +1.0, batch->pos.data() + beg, true);
          backprop_branch(cn, hn, -1.0, batch->neg.data() + beg, true);
        }
      });
  return tape.wrap(id);
}

// lambda * mi + inst (both scalars); the trainer negates this for descent.
inline Var total_objective(Tape& tape, Var mi, Var inst, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  if (!tape.value(mi).is_scalar() || !tape.value(inst).is_scalar())
    throw std::invalid_argument("total_objective: terms must be scalars");
  return tape.add(tape.scale(mi, lambda), inst);
}

}  // namespace coin
