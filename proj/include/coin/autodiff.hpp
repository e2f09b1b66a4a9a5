#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coin/rng.hpp"
#include "coin/tensor.hpp"

namespace coin {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Record-and-replay reverse-mode engine. Nodes are appended in evaluation
// order, which is already a topological order; backward walks the tape in
// reverse. Gradients accumulate by summation on fan-out.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Var leaf(Tensor value, bool trainable = false) {
    return wrap(add_node("leaf", std::move(value), {}, nullptr, trainable));
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Low-level node registration; used by fused ops elsewhere.
  int add_node(const char* name, Tensor value, std::vector<int> parents, BackwardFn bwd,
               bool trainable = false) {
    bool req = trainable;
    for (int p : parents) {
      check_id(p);
      req = req || nodes_[p].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.bwd = std::move(bwd);
    n.requires_grad = req;
    n.trainable = trainable;
    n.name = name;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var wrap(int id) { return Var{this, id}; }

  const Tensor& value(Var v) const { return value_of(check(v)); }
  const Tensor& value_of(int id) const {
    check_id(id);
    return nodes_[id].value;
  }
  bool requires_grad(int id) const {
    check_id(id);
    return nodes_[id].requires_grad;
  }
  bool has_grad(int id) const {
    check_id(id);
    return nodes_[id].has_grad;
  }
  const Tensor& grad_of(int id) const {
    check_id(id);
    if (!nodes_[id].has_grad) throw std::logic_error("grad_of: node has no gradient");
    return nodes_[id].grad;
  }
  // Gradient accumulation buffer, zero-initialized on first access.
  Tensor& grad_acc(int id) {
    check_id(id);
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- forward ops ----

  Var matmul(Var a, Var b) {
    const Tensor &av = value(a), &bv = value(b);
    Tensor out;
    matmul_nn(av, bv, out);
    int id = add_node("matmul", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      auto [pa, pb] = t.parents2(self);
      if (t.requires_grad(pa)) matmul_nt(g, t.value_of(pb), t.grad_acc(pa), true);
      if (t.requires_grad(pb)) matmul_tn(t.value_of(pa), g, t.grad_acc(pb), true);
    });
    return wrap(id);
  }

  // a^T * b
  Var matmul_tn_op(Var a, Var b) {
    const Tensor &av = value(a), &bv = value(b);
    Tensor out;
    matmul_tn(av, bv, out);
    int id = add_node("matmul_tn", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      auto [pa, pb] = t.parents2(self);
      if (t.requires_grad(pa)) matmul_nt(t.value_of(pb), g, t.grad_acc(pa), true);
      if (t.requires_grad(pb)) matmul_nn(t.value_of(pa), g, t.grad_acc(pb), true);
    });
    return wrap(id);
  }

  Var spmm_op(std::shared_ptr<const SparseMatrix> s, Var d) {
    if (!s) throw std::invalid_argument("spmm: null sparse operand");
    Tensor out;
    spmm(*s, value(d), out);
    int id = add_node("spmm", std::move(out), {d.id}, [s](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      int pd = t.nodes_[self].parents[0];
      if (t.requires_grad(pd)) spmm_t(*s, g, t.grad_acc(pd), true);
    });
    return wrap(id);
  }

  Var concat_columns(Var a, Var b) {
    const Tensor &av = value(a), &bv = value(b);
    if (av.rows() != bv.rows())
      throw std::invalid_argument("concat_columns: row mismatch " + av.shape_str() + " vs " +
                                  bv.shape_str());
    Tensor out(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      double* o = out.row(r);
      const double* l = av.row(r);
      const double* rr = bv.row(r);
      std::copy(l, l + av.cols(), o);
      std::copy(rr, rr + bv.cols(), o + av.cols());
    }
    std::size_t ac = av.cols();
    int id = add_node("concat_columns", std::move(out), {a.id, b.id}, [ac](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      auto [pa, pb] = t.parents2(self);
      if (t.requires_grad(pa)) {
        Tensor& ga = t.grad_acc(pa);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < ac; ++c) ga(r, c) += g(r, c);
      }
      if (t.requires_grad(pb)) {
        Tensor& gb = t.grad_acc(pb);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols() - ac; ++c) gb(r, c) += g(r, ac + c);
      }
    });
    return wrap(id);
  }

  // Same shape, or b a 1xN row vector broadcast over a's rows.
  Var add(Var a, Var b) {
    const Tensor &av = value(a), &bv = value(b);
    bool broadcast = !av.same_shape(bv);
    if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols()))
      throw std::invalid_argument("add: incompatible shapes " + av.shape_str() + " + " +
                                  bv.shape_str());
    Tensor out = av;
    if (broadcast) {
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double* o = out.row(r);
        const double* brow = bv.row(0);
        for (std::size_t c = 0; c < out.cols(); ++c) o[c] += brow[c];
      }
    } else {
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    }
    int id = add_node("add", std::move(out), {a.id, b.id}, [broadcast](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      auto [pa, pb] = t.parents2(self);
      if (t.requires_grad(pa)) {
        Tensor& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (t.requires_grad(pb)) {
        Tensor& gb = t.grad_acc(pb);
        if (broadcast) {
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        } else {
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
      }
    });
    return wrap(id);
  }

  Var multiply(Var a, Var b) {
    const Tensor &av = value(a), &bv = value(b);
    if (!av.same_shape(bv))
      throw std::invalid_argument("multiply: shape mismatch " + av.shape_str() + " vs " +
                                  bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    int id = add_node("multiply", std::move(out), {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      auto [pa, pb] = t.parents2(self);
      if (t.requires_grad(pa)) {
        Tensor& ga = t.grad_acc(pa);
        const Tensor& bv2 = t.value_of(pb);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (t.requires_grad(pb)) {
        Tensor& gb = t.grad_acc(pb);
        const Tensor& av2 = t.value_of(pa);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av2[i];
      }
    });
    return wrap(id);
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    int id = add_node("scale", std::move(out), {a.id}, [c](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      int pa = t.nodes_[self].parents[0];
      if (t.requires_grad(pa)) {
        Tensor& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
      }
    });
    return wrap(id);
  }

  Var leaky_relu(Var a, double slope) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i)
      if (out[i] <= 0.0) out[i] *= slope;  // derivative at 0 is the slope
    int id = add_node("leaky_relu", std::move(out), {a.id}, [slope](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      const Tensor& x = t.value_of(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
    });
    return wrap(id);
  }

  Var tanh_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    int id = add_node("tanh", std::move(out), {a.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    return wrap(id);
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
    int id = add_node("sigmoid", std::move(out), {a.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return wrap(id);
  }

  Var exp_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    int id = add_node("exp", std::move(out), {a.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    });
    return wrap(id);
  }

  // log(max(x, eps)); gradient clamped to 0 where x < eps.
  Var log_clamped(Var a, double eps = 1e-12) {
    if (!(eps > 0.0)) throw std::invalid_argument("log_clamped: eps must be positive");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], eps));
    int id = add_node("log_clamped", std::move(out), {a.id}, [eps](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      const Tensor& x = t.value_of(pa);
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (x[i] >= eps) ga[i] += g[i] / x[i];
    });
    return wrap(id);
  }

  Var softmax_rows(Var a) {
    const Tensor& x = value(a);
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.row(r);
      double* yr = out.row(r);
      double mx = xr[0];
      for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, xr[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        yr[c] = std::exp(xr[c] - mx);
        z += yr[c];
      }
      for (std::size_t c = 0; c < x.cols(); ++c) yr[c] /= z;
    }
    int id = add_node("softmax_rows", std::move(out), {a.id}, [](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      const Tensor& y = t.value_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* gr = g.row(r);
        const double* yr = y.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) dot += gr[c] * yr[c];
        double* gar = ga.row(r);
        for (std::size_t c = 0; c < g.cols(); ++c) gar[c] += yr[c] * (gr[c] - dot);
      }
    });
    return wrap(id);
  }

  Var sum(Var a) {
    const Tensor& x = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
    int id = add_node("sum", Tensor::scalar(s), {a.id}, [](Tape& t, int self) {
      double g = t.grad_of(self).item();
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
    return wrap(id);
  }

  Var mean(Var a) {
    const Tensor& x = value(a);
    if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
    double inv = 1.0 / static_cast<double>(x.numel());
    int id = add_node("mean", Tensor::scalar(s * inv), {a.id}, [inv](Tape& t, int self) {
      double g = t.grad_of(self).item() * inv;
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
    return wrap(id);
  }

  // Training mode: each element dropped independently with probability p,
  // survivors scaled by 1/(1-p). Inference mode: identity, no rng draws.
  Var dropout(Var a, double p, bool training, RngStream* rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
    if (!training) return a;
    if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
    const Tensor& x = value(a);
    auto mask = std::make_shared<Tensor>(x.rows(), x.cols());
    double keep_scale = 1.0 / (1.0 - p);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      double m = rng->uniform() < p ? 0.0 : keep_scale;
      (*mask)[i] = m;
      out[i] *= m;
    }
    int id = add_node("dropout", std::move(out), {a.id}, [mask](Tape& t, int self) {
      const Tensor& g = t.grad_of(self);
      int pa = t.nodes_[self].parents[0];
      if (!t.requires_grad(pa)) return;
      Tensor& ga = t.grad_acc(pa);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (*mask)[i];
    });
    return wrap(id);
  }

  // ---- reverse pass ----

  // Gradients of a scalar root with respect to every trainable leaf.
  // Trainable leaves not on any path to the root get zero gradients.
  void backward(Var root) {
    int rid = check(root);
    if (!value_of(rid).is_scalar())
      throw std::invalid_argument("backward: root must be scalar, got " +
                                  value_of(rid).shape_str());
    grad_acc(rid)[0] = 1.0;
    for (int id = rid; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.has_grad && n.bwd && n.requires_grad) n.bwd(*this, id);
    }
  }

  Tensor gradient(Var v) const {
    int id = check(v);
    if (nodes_[id].has_grad) return nodes_[id].grad;
    return Tensor::zeros_like(nodes_[id].value);
  }

  std::pair<int, int> parents2(int id) const {
    check_id(id);
    const auto& p = nodes_[id].parents;
    if (p.size() != 2) throw std::logic_error("parents2: node does not have two parents");
    return {p[0], p[1]};
  }

  int parents1(int id) const {
    check_id(id);
    const auto& p = nodes_[id].parents;
    if (p.size() != 1) throw std::logic_error("parents1: node does not have one parent");
    return p[0];
  }

  const std::vector<int>& parents_of(int id) const {
    check_id(id);
    return nodes_[id].parents;
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn bwd;
    bool requires_grad = false;
    bool trainable = false;
    bool has_grad = false;
    const char* name = "";
  };

  int check(Var v) const {
    if (v.tape != this) throw std::logic_error("var belongs to a different tape");
    check_id(v.id);
    return v.id;
  }
  void check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw std::out_of_range("invalid tape node id");
  }

  std::vector<Node> nodes_;
};

// Max relative error between analytic gradients and central finite
// differences over every entry of every parameter. `build` must be a
// deterministic function of the parameter values (dropout disabled).
template <class Builder>
double gradient_check(std::vector<Tensor> params, Builder&& build, double eps = 1e-5) {
  auto eval = [&](const std::vector<Tensor>& ps, bool want_grads,
                  std::vector<Tensor>* grads) -> double {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(ps.size());
    for (const auto& p : ps) leaves.push_back(tape.leaf(p, want_grads));
    Var root = build(tape, leaves);
    double y = tape.value(root).item();
    if (!std::isfinite(y)) throw std::runtime_error("gradient_check: non-finite objective");
    if (want_grads) {
      tape.backward(root);
      grads->clear();
      for (Var l : leaves) {
        Tensor g = tape.gradient(l);
        if (!g.all_finite()) throw std::runtime_error("gradient_check: non-finite gradient");
        grads->push_back(std::move(g));
      }
    }
    return y;
  };

  std::vector<Tensor> analytic;
  eval(params, true, &analytic);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].numel(); ++i) {
      double orig = params[pi][i];
      params[pi][i] = orig + eps;
      double fp = eval(params, false, nullptr);
      params[pi][i] = orig - eps;
      double fm = eval(params, false, nullptr);
      params[pi][i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[pi][i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace coin
