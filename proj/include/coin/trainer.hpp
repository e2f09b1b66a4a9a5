#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/autodiff.hpp"
#include "coin/encoder.hpp"
#include "coin/graph.hpp"
#include "coin/objectives.hpp"
#include "coin/rng.hpp"

namespace coin {

struct TrainConfig {
  std::size_t d = 128;
  std::size_t layers = 2;
  std::size_t n_k = 2;
  std::size_t n_l = 2;
  double lambda = 1.0;
  double lr = 0.0005;
  std::size_t epochs = 100;
  double dropout_p = 0.5;
  std::size_t negatives_per_positive = 1;
  std::size_t edge_batch = 0;  // 0 = full batch
  LossForm loss_form = LossForm::literal;
  std::uint64_t seed = 1;
  std::size_t head_depth = 1;
  bool mi_in_graph = true;  // false detaches I(K;L) from the gradient path

  void validate() const {
    if (d == 0 || layers == 0 || n_k < 2 || n_l < 2 || head_depth == 0)
      throw std::invalid_argument("train config: counts must be positive (clusters >= 2)");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("train config: dropout_p must be in [0, 1)");
    if (lambda < 0.0) throw std::invalid_argument("train config: lambda must be nonnegative");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (negatives_per_positive == 0)
      throw std::invalid_argument("train config: negatives_per_positive must be positive");
  }

  nlohmann::json to_json() const {
    return {{"d", d},
            {"layers", layers},
            {"n_k", n_k},
            {"n_l", n_l},
            {"lambda", lambda},
            {"lr", lr},
            {"epochs", epochs},
            {"dropout_p", dropout_p},
            {"negatives_per_positive", negatives_per_positive},
            {"edge_batch", edge_batch},
            {"loss_form", loss_form == LossForm::literal ? "literal" : "log"},
            {"seed", seed},
            {"head_depth", head_depth},
            {"mi_in_graph", mi_in_graph}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    static const char* known[] = {"d",          "layers",     "n_k",
                                  "n_l",        "lambda",     "lr",
                                  "epochs",     "dropout_p",  "negatives_per_positive",
                                  "edge_batch", "loss_form",  "seed",
                                  "head_depth", "mi_in_graph"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw std::invalid_argument("unknown train config key: " + it.key());
    }
    c.d = j.value("d", c.d);
    c.layers = j.value("layers", c.layers);
    c.n_k = j.value("n_k", c.n_k);
    c.n_l = j.value("n_l", c.n_l);
    c.lambda = j.value("lambda", c.lambda);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.negatives_per_positive = j.value("negatives_per_positive", c.negatives_per_positive);
    c.edge_batch = j.value("edge_batch", c.edge_batch);
    if (j.contains("loss_form")) c.loss_form = parse_loss_form(j.at("loss_form").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.head_depth = j.value("head_depth", c.head_depth);
    c.mi_in_graph = j.value("mi_in_graph", c.mi_in_graph);
    c.validate();
    return c;
  }
};

struct Model {
  EncoderParams encoder;
  EmbeddingPair init;
  ClusterHeads heads;
  ScorerParams scorer;

  // Deterministic build order: embeddings, encoder layers, heads, scorer.
  static Model init_model(std::size_t num_u, std::size_t num_v, const TrainConfig& cfg,
                          RngStream& rng) {
    Model m;
    m.init = init_embeddings(num_u, num_v, cfg.d, rng);
    m.encoder = EncoderParams::init(cfg.layers, cfg.d, rng);
    m.heads.u = ClusterHead::init(cfg.d, cfg.n_k, cfg.head_depth, rng);
    m.heads.v = ClusterHead::init(cfg.d, cfg.n_l, cfg.head_depth, rng);
    m.scorer = ScorerParams::init(cfg.d, rng);
    return m;
  }

  // Fixed-order registry used by the optimizer and the checkpoint format.
  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("init.u", &init.u);
    out.emplace_back("init.v", &init.v);
    for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
      std::string p = "enc." + std::to_string(l) + ".";
      out.emplace_back(p + "w1", &encoder.layers[l].w1);
      out.emplace_back(p + "w2", &encoder.layers[l].w2);
      out.emplace_back(p + "w3", &encoder.layers[l].w3);
      out.emplace_back(p + "w4", &encoder.layers[l].w4);
    }
    auto head = [&out](const char* tag, ClusterHead& h) {
      for (std::size_t i = 0; i < h.w.size(); ++i) {
        std::string p = std::string(tag) + "." + std::to_string(i) + ".";
        out.emplace_back(p + "w", &h.w[i]);
        out.emplace_back(p + "b", &h.b[i]);
      }
    };
    head("head_u", heads.u);
    head("head_v", heads.v);
    out.emplace_back("scorer.w1", &scorer.w1);
    out.emplace_back("scorer.w2", &scorer.w2);
    return out;
  }
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState like(const std::vector<std::pair<std::string, Tensor*>>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
      s.m.push_back(Tensor::zeros_like(*t));
      s.v.push_back(Tensor::zeros_like(*t));
    }
    return s;
  }
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  state.step += 1;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i]))
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

struct TrainReport {
  struct Record {
    std::size_t epoch;  // 0 = initialization, before any update
    double mi;
    double instance;
    double total;
  };
  std::vector<Record> records;
  double wall_seconds = 0.0;

  const Record& at_epoch(std::size_t e) const {
    for (const auto& r : records)
      if (r.epoch == e) return r;
    throw std::out_of_range("no record for epoch " + std::to_string(e));
  }
};

inline void write_mi_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write MI curve: " + path);
  out << "epoch,mi,instance_obj,total_obj\n";
  out.precision(17);
  for (const auto& r : report.records)
    out << r.epoch << ',' << r.mi << ',' << r.instance << ',' << r.total << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace detail {

struct ModelVars {
  Var u0, v0;
  EncoderVars enc;
  ClusterHeadVars head_u, head_v;
  ScorerVars scorer;
};

inline ModelVars model_to_tape(Tape& tape, Model& model, bool trainable) {
  ModelVars mv;
  mv.u0 = tape.leaf(model.init.u, trainable);
  mv.v0 = tape.leaf(model.init.v, trainable);
  mv.enc = to_tape(tape, model.encoder, trainable);
  mv.head_u = to_tape(tape, model.heads.u, trainable);
  mv.head_v = to_tape(tape, model.heads.v, trainable);
  mv.scorer = to_tape(tape, model.scorer, trainable);
  return mv;
}

inline std::vector<Var> leaf_registry(const ModelVars& mv) {
  std::vector<Var> out{mv.u0, mv.v0};
  for (const auto& l : mv.enc.layers) {
    out.push_back(l.w1);
    out.push_back(l.w2);
    out.push_back(l.w3);
    out.push_back(l.w4);
  }
  for (std::size_t i = 0; i < mv.head_u.w.size(); ++i) {
    out.push_back(mv.head_u.w[i]);
    out.push_back(mv.head_u.b[i]);
  }
  for (std::size_t i = 0; i < mv.head_v.w.size(); ++i) {
    out.push_back(mv.head_v.w[i]);
    out.push_back(mv.head_v.b[i]);
  }
  out.push_back(mv.scorer.w1);
  out.push_back(mv.scorer.w2);
  return out;
}

struct ObjectiveValue {
  double mi, instance, total;
};

inline void check_finite(double mi, double inst, std::size_t epoch) {
  if (!std::isfinite(mi))
    throw std::runtime_error("non-finite mutual information at epoch " + std::to_string(epoch));
  if (!std::isfinite(inst))
    throw std::runtime_error("non-finite instance objective at epoch " + std::to_string(epoch));
}

}  // namespace detail

// One optimization run. Per epoch: resample one negative per positive (times
// the configured multiplicity), build the training-mode objective
// lambda * I(K;L) + L_inst, backpropagate its negation, take one Adam step
// (full batch unless edge_batch is set), then record the dropout-free
// objective. Record 0 is the initialized model.
inline std::pair<Model, TrainReport> train(const BipartiteGraph& graph, const TrainConfig& cfg) {
  cfg.validate();
  if (graph.edges.empty()) throw std::invalid_argument("train: graph has no edges");

  auto t_start = std::chrono::steady_clock::now();
  RngStream init_rng = RngStream::derive(cfg.seed, "init");
  RngStream neg_rng = RngStream::derive(cfg.seed, "negatives");
  RngStream drop_rng = RngStream::derive(cfg.seed, "dropout");
  RngStream batch_rng = RngStream::derive(cfg.seed, "batches");

  Model model = Model::init_model(graph.num_u, graph.num_v, cfg, init_rng);
  auto registry = model.named_params();
  AdamState adam = AdamState::like(registry);
  EdgePrior prior(graph);
  auto prior_full = std::make_shared<SparseMatrix>(prior.matrix());

  std::size_t n_edges = graph.edges.size();
  std::size_t mult = cfg.negatives_per_positive;

  // Positive list expanded to one entry per (positive, negative) pair.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pos_expanded;
  pos_expanded.reserve(n_edges * mult);
  for (const auto& e : graph.edges)
    for (std::size_t j = 0; j < mult; ++j) pos_expanded.push_back(e);

  auto draw_negatives = [&]() {
    std::vector<std::uint32_t> negs;
    negs.reserve(n_edges * mult);
    for (const auto& e : graph.edges) {
      auto drawn = sample_negatives(e.first, mult, graph, neg_rng);
      negs.insert(negs.end(), drawn.begin(), drawn.end());
    }
    return negs;
  };

  // Dropout-free objective on the full edge set with the given negatives.
  auto evaluate = [&](const std::vector<std::uint32_t>& negs,
                      std::size_t epoch) -> detail::ObjectiveValue {
    Tape tape;
    auto mv = detail::model_to_tape(tape, model, false);
    EmbeddingVars emb = encode(tape, graph, mv.enc, mv.u0, mv.v0);
    auto [pu, pv] = cluster_probs(tape, emb.u, emb.v, mv.head_u, mv.head_v);
    Var joint = co_cluster_joint(tape, pu, pv, prior_full);
    double mi = tape.value(mutual_information(tape, joint)).item();
    Var inst = instance_loss(tape, emb.u, emb.v, mv.scorer, pos_expanded, negs, cfg.loss_form);
    double iv = tape.value(inst).item();
    detail::check_finite(mi, iv, epoch);
    return {mi, iv, cfg.lambda * mi + iv};
  };

  TrainReport report;
  {
    auto base_negs = draw_negatives();
    auto v = evaluate(base_negs, 0);
    report.records.push_back({0, v.mi, v.instance, v.total});
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto negs = draw_negatives();

    auto step = [&](const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pos,
                    const std::vector<std::uint32_t>& batch_negs,
                    std::shared_ptr<const SparseMatrix> prior_mat) {
      Tape tape;
      auto mv = detail::model_to_tape(tape, model, true);
      EmbeddingVars emb =
          encode(tape, graph, mv.enc, mv.u0, mv.v0, cfg.dropout_p, true, &drop_rng);
      auto [pu, pv] = cluster_probs(tape, emb.u, emb.v, mv.head_u, mv.head_v);
      Var joint = co_cluster_joint(tape, pu, pv, prior_mat);
      Var mi = mutual_information(tape, joint);
      if (!cfg.mi_in_graph) mi = tape.constant(tape.value(mi));
      Var inst = instance_loss(tape, emb.u, emb.v, mv.scorer, pos, batch_negs, cfg.loss_form);
      detail::check_finite(tape.value(mi).item(), tape.value(inst).item(), epoch);
      Var loss = tape.scale(total_objective(tape, mi, inst, cfg.lambda), -1.0);
      tape.backward(loss);

      std::vector<Var> leaves = detail::leaf_registry(mv);
      std::vector<Tensor*> ps;
      std::vector<Tensor> gs;
      ps.reserve(registry.size());
      gs.reserve(registry.size());
      for (std::size_t i = 0; i < registry.size(); ++i) {
        ps.push_back(registry[i].second);
        Tensor g = tape.gradient(leaves[i]);
        if (!g.all_finite())
          throw std::runtime_error("non-finite gradient for " + registry[i].first +
                                   " at epoch " + std::to_string(epoch));
        gs.push_back(std::move(g));
      }
      adam_step(ps, gs, adam, cfg.lr);
    };

    if (cfg.edge_batch == 0 || cfg.edge_batch >= pos_expanded.size()) {
      step(pos_expanded, negs, prior_full);
    } else {
      // Shuffle expanded pair indices; each chunk optimizes the batch
      // objective with the joint renormalized over the batch's edges.
      std::size_t n = pos_expanded.size();
      std::vector<std::uint32_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[batch_rng.uniform_int(i)]);
      for (std::size_t beg = 0; beg < n; beg += cfg.edge_batch) {
        std::size_t len = std::min(cfg.edge_batch, n - beg);
        std::vector<std::pair<std::uint32_t, std::uint32_t>> bp(len);
        std::vector<std::uint32_t> bn(len);
        std::vector<double> mass(len, 1.0 / static_cast<double>(len));
        for (std::size_t i = 0; i < len; ++i) {
          bp[i] = pos_expanded[perm[beg + i]];
          bn[i] = negs[perm[beg + i]];
        }
        // duplicate (u, v) pairs within a batch fold their mass together
        std::vector<std::pair<std::uint32_t, std::uint32_t>> coo;
        std::vector<double> vals;
        {
          auto sorted = bp;
          std::sort(sorted.begin(), sorted.end());
          for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            coo.push_back(sorted[i]);
            vals.push_back(static_cast<double>(j - i) / static_cast<double>(len));
            i = j;
          }
        }
        auto prior_batch = std::make_shared<SparseMatrix>(
            SparseMatrix::from_coo(graph.num_u, graph.num_v, coo, &vals));
        step(bp, bn, prior_batch);
      }
    }

    auto v = evaluate(negs, epoch);
    report.records.push_back({epoch, v.mi, v.instance, v.total});
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(model), std::move(report)};
}

}  // namespace coin
