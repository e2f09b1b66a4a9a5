#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "coin/autodiff.hpp"
#include "coin/graph.hpp"
#include "coin/rng.hpp"
#include "coin/tensor.hpp"

namespace coin {

// uniform(-a, a) with a = sqrt(6 / (rows + cols)), filled row-major.
inline Tensor xavier_uniform(std::size_t rows, std::size_t cols, RngStream& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("xavier_uniform: empty shape");
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

struct EmbeddingPair {
  Tensor u;  // |U| x d
  Tensor v;  // |V| x d
};

inline EmbeddingPair init_embeddings(std::size_t num_u, std::size_t num_v, std::size_t d,
                                     RngStream& rng) {
  return {xavier_uniform(num_u, d, rng), xavier_uniform(num_v, d, rng)};
}

struct EncoderParams {
  struct Layer {
    Tensor w1;  // d x d
    Tensor w2;  // 2d x d
    Tensor w3;  // d x d
    Tensor w4;  // 2d x d
  };
  std::vector<Layer> layers;
  std::size_t d = 0;
  double leaky_slope = 0.1;

  static EncoderParams init(std::size_t num_layers, std::size_t d, RngStream& rng) {
    if (num_layers == 0) throw std::invalid_argument("encoder needs at least one layer");
    if (d == 0) throw std::invalid_argument("hidden size must be positive");
    EncoderParams p;
    p.d = d;
    for (std::size_t l = 0; l < num_layers; ++l)
      p.layers.push_back({xavier_uniform(d, d, rng), xavier_uniform(2 * d, d, rng),
                          xavier_uniform(d, d, rng), xavier_uniform(2 * d, d, rng)});
    return p;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("encoder needs at least one layer");
    for (const auto& l : layers) {
      bool ok = l.w1.rows() == d && l.w1.cols() == d && l.w3.rows() == d && l.w3.cols() == d &&
                l.w2.rows() == 2 * d && l.w2.cols() == d && l.w4.rows() == 2 * d &&
                l.w4.cols() == d;
      if (!ok) throw std::invalid_argument("encoder layer weight shape mismatch for d=" +
                                           std::to_string(d));
    }
  }
};

struct EncoderVars {
  struct Layer {
    Var w1, w2, w3, w4;
  };
  std::vector<Layer> layers;
  double leaky_slope = 0.1;
};

inline EncoderVars to_tape(Tape& tape, const EncoderParams& p, bool trainable) {
  p.validate();
  EncoderVars v;
  v.leaky_slope = p.leaky_slope;
  for (const auto& l : p.layers)
    v.layers.push_back({tape.leaf(l.w1, trainable), tape.leaf(l.w2, trainable),
                        tape.leaf(l.w3, trainable), tape.leaf(l.w4, trainable)});
  return v;
}

struct EmbeddingVars {
  Var u, v;
};

// One pass of the alternating message-passing stack. Per layer:
//   vhat = tanh([leaky_relu(A_vu * u_prev * W1) || v_prev] * W2)
//   u    = tanh([leaky_relu(A_uv * vhat   * W3) || u_prev] * W4)
// The v state carried forward (and returned) is vhat. In training mode
// dropout hits each layer's two outputs, vhat first.
inline EmbeddingVars encode(Tape& tape, const BipartiteGraph& graph, const EncoderVars& params,
                            Var u0, Var v0, double dropout_p = 0.0, bool training = false,
                            RngStream* rng = nullptr) {
  if (params.layers.empty()) throw std::invalid_argument("encode: no layers");
  const Tensor& u0v = tape.value(u0);
  const Tensor& v0v = tape.value(v0);
  if (u0v.rows() != graph.num_u || v0v.rows() != graph.num_v)
    throw std::invalid_argument("encode: embedding row counts do not match the graph");
  if (u0v.cols() != v0v.cols()) throw std::invalid_argument("encode: embedding widths differ");
  if (u0v.cols() != tape.value(params.layers[0].w1).rows())
    throw std::invalid_argument("encode: embedding width does not match weights");

  Var u = u0, v = v0;
  for (const auto& l : params.layers) {
    Var mv = tape.leaky_relu(tape.matmul(tape.spmm_op(graph.adj_vu, u), l.w1), params.leaky_slope);
    Var vhat = tape.tanh_op(tape.matmul(tape.concat_columns(mv, v), l.w2));
    if (training && dropout_p > 0.0) vhat = tape.dropout(vhat, dropout_p, true, rng);
    Var mu =
        tape.leaky_relu(tape.matmul(tape.spmm_op(graph.adj_uv, vhat), l.w3), params.leaky_slope);
    Var unew = tape.tanh_op(tape.matmul(tape.concat_columns(mu, u), l.w4));
    if (training && dropout_p > 0.0) unew = tape.dropout(unew, dropout_p, true, rng);
    u = unew;
    v = vhat;
  }
  return {u, v};
}

// Inference-mode convenience: plain tensors in, plain tensors out.
inline EmbeddingPair encode(const BipartiteGraph& graph, const EncoderParams& params,
                            const EmbeddingPair& init) {
  Tape tape;
  EncoderVars pv = to_tape(tape, params, false);
  Var u0 = tape.leaf(init.u), v0 = tape.leaf(init.v);
  EmbeddingVars out = encode(tape, graph, pv, u0, v0);
  return {tape.value(out.u), tape.value(out.v)};
}

}  // namespace coin
