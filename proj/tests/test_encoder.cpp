#include <doctest.h>

#include <cmath>

#include "coin/encoder.hpp"
#include "support.hpp"

using coin::BipartiteGraph;
using coin::EmbeddingPair;
using coin::EncoderParams;
using coin::RngStream;
using coin::Tape;
using coin::Tensor;
using coin::Var;

namespace {

BipartiteGraph toy_graph() {
  return BipartiteGraph::from_edges(
      4, 5, {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 3}, {3, 3}, {3, 4}, {2, 0}});
}

}  // namespace

TEST_SUITE("test_encoder") {

TEST_CASE("xavier init is deterministic and bounded") {
  RngStream a(3), b(3);
  Tensor t1 = coin::xavier_uniform(20, 30, a);
  Tensor t2 = coin::xavier_uniform(20, 30, b);
  for (std::size_t i = 0; i < t1.numel(); ++i) CHECK(t1[i] == t2[i]);

  double bound = std::sqrt(6.0 / (20 + 30));
  double mx = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < t1.numel(); ++i) {
    mx = std::max(mx, std::fabs(t1[i]));
    sum += t1[i];
  }
  CHECK(mx < bound);
  CHECK(mx > 0.5 * bound);  // something actually spans the range
  double sigma_mean = bound / std::sqrt(3.0 * t1.numel());
  CHECK(std::fabs(sum / t1.numel()) < 4.0 * sigma_mean);
}

TEST_CASE("embedding init shapes and ordering") {
  RngStream rng(1);
  EmbeddingPair e = coin::init_embeddings(3, 5, 4, rng);
  CHECK(e.u.rows() == 3);
  CHECK(e.u.cols() == 4);
  CHECK(e.v.rows() == 5);
  CHECK(e.v.cols() == 4);

  // u is drawn before v from the same stream
  RngStream r2(1);
  Tensor u_again = coin::xavier_uniform(3, 4, r2);
  for (std::size_t i = 0; i < u_again.numel(); ++i) CHECK(e.u[i] == u_again[i]);
}

TEST_CASE("encoder parameter validation") {
  RngStream rng(2);
  EncoderParams p = EncoderParams::init(2, 4, rng);
  CHECK(p.layers.size() == 2);
  CHECK(p.layers[0].w1.rows() == 4);
  CHECK(p.layers[0].w1.cols() == 4);
  CHECK(p.layers[0].w2.rows() == 8);
  CHECK(p.layers[0].w2.cols() == 4);
  CHECK_NOTHROW(p.validate());
  p.layers[1].w3 = Tensor(3, 4);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("zero weights give zero embeddings") {
  BipartiteGraph g = toy_graph();
  RngStream rng(4);
  EmbeddingPair init = coin::init_embeddings(4, 5, 3, rng);
  EncoderParams p = EncoderParams::init(2, 3, rng);
  for (auto& l : p.layers) {
    l.w1 = Tensor::zeros_like(l.w1);
    l.w2 = Tensor::zeros_like(l.w2);
    l.w3 = Tensor::zeros_like(l.w3);
    l.w4 = Tensor::zeros_like(l.w4);
  }
  EmbeddingPair out = coin::encode(g, p, init);
  for (std::size_t i = 0; i < out.u.numel(); ++i) CHECK(out.u[i] == 0.0);
  for (std::size_t i = 0; i < out.v.numel(); ++i) CHECK(out.v[i] == 0.0);
}

TEST_CASE("encoder matches the dense straight-line oracle") {
  BipartiteGraph g = toy_graph();
  RngStream rng(7);
  EmbeddingPair init = coin::init_embeddings(4, 5, 6, rng);
  EncoderParams p = EncoderParams::init(3, 6, rng);

  EmbeddingPair got = coin::encode(g, p, init);
  EmbeddingPair want = oracle::encode_dense(g, p, init);
  CHECK(oracle::max_abs_diff(got.u, want.u) < 1e-12);
  CHECK(oracle::max_abs_diff(got.v, want.v) < 1e-12);

  for (std::size_t i = 0; i < got.u.numel(); ++i) {
    CHECK(got.u[i] > -1.0);
    CHECK(got.u[i] < 1.0);
  }

  EmbeddingPair again = coin::encode(g, p, init);
  CHECK(oracle::max_abs_diff(got.u, again.u) == 0.0);
  CHECK(oracle::max_abs_diff(got.v, again.v) == 0.0);
}

TEST_CASE("node relabeling permutes outputs consistently") {
  BipartiteGraph g = toy_graph();
  RngStream rng(9);
  EmbeddingPair init = coin::init_embeddings(4, 5, 4, rng);
  EncoderParams p = EncoderParams::init(2, 4, rng);
  EmbeddingPair base = coin::encode(g, p, init);

  std::vector<std::uint32_t> perm_u{2, 0, 3, 1};  // new index of old u
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (auto [u, v] : g.edges) edges.emplace_back(perm_u[u], v);
  BipartiteGraph gp = BipartiteGraph::from_edges(4, 5, edges);
  EmbeddingPair init_p = init;
  for (std::uint32_t u = 0; u < 4; ++u)
    for (std::size_t j = 0; j < 4; ++j) init_p.u(perm_u[u], j) = init.u(u, j);
  EmbeddingPair out = coin::encode(gp, p, init_p);

  for (std::uint32_t u = 0; u < 4; ++u)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(std::fabs(out.u(perm_u[u], j) - base.u(u, j)) < 1e-12);
  CHECK(oracle::max_abs_diff(out.v, base.v) < 1e-12);
}

TEST_CASE("isolated nodes stay finite and depend only on their own state") {
  BipartiteGraph g = BipartiteGraph::from_edges(3, 2, {{0, 0}, {0, 1}, {1, 0}});
  RngStream rng(11);
  EmbeddingPair init = coin::init_embeddings(3, 2, 4, rng);
  EncoderParams p = EncoderParams::init(2, 4, rng);
  EmbeddingPair out = coin::encode(g, p, init);
  CHECK(out.u.all_finite());
  CHECK(out.v.all_finite());

  // changing a connected node's init must not move the isolated node u2
  EmbeddingPair init2 = init;
  for (std::size_t j = 0; j < 4; ++j) init2.u(0, j) += 0.3;
  EmbeddingPair out2 = coin::encode(g, p, init2);
  for (std::size_t j = 0; j < 4; ++j) CHECK(out2.u(2, j) == out.u(2, j));
  bool moved = false;
  for (std::size_t j = 0; j < 4; ++j) moved = moved || out2.u(0, j) != out.u(0, j);
  CHECK(moved);
}

TEST_CASE("encoder gradients match finite differences") {
  BipartiteGraph g = toy_graph();
  RngStream rng(13);
  EmbeddingPair init = coin::init_embeddings(4, 5, 3, rng);
  EncoderParams proto = EncoderParams::init(2, 3, rng);

  std::vector<Tensor> params{init.u, init.v};
  for (const auto& l : proto.layers) {
    params.push_back(l.w1);
    params.push_back(l.w2);
    params.push_back(l.w3);
    params.push_back(l.w4);
  }
  RngStream wrng(99);
  Tensor weights = oracle::random_tensor(3, 1, wrng);  // fixed across builder calls
  double err = coin::gradient_check(params, [&, weights](Tape& t, const std::vector<Var>& v) {
    coin::EncoderVars enc;
    for (std::size_t l = 0; l < 2; ++l)
      enc.layers.push_back({v[2 + 4 * l], v[3 + 4 * l], v[4 + 4 * l], v[5 + 4 * l]});
    enc.leaky_slope = proto.leaky_slope;
    coin::EmbeddingVars emb = coin::encode(t, g, enc, v[0], v[1]);
    // weighted sum keeps every output on the gradient path
    Var wu = t.constant(weights);
    return t.add(t.sum(t.matmul(emb.u, wu)), t.sum(t.matmul(emb.v, wu)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("dropout perturbs training mode only") {
  BipartiteGraph g = toy_graph();
  RngStream rng(17);
  EmbeddingPair init = coin::init_embeddings(4, 5, 4, rng);
  EncoderParams p = EncoderParams::init(2, 4, rng);

  Tape t1;
  coin::EncoderVars e1 = coin::to_tape(t1, p, false);
  RngStream drop(5);
  auto out_train =
      coin::encode(t1, g, e1, t1.leaf(init.u), t1.leaf(init.v), 0.5, true, &drop);

  Tape t2;
  coin::EncoderVars e2 = coin::to_tape(t2, p, false);
  auto out_eval = coin::encode(t2, g, e2, t2.leaf(init.u), t2.leaf(init.v), 0.5, false, nullptr);

  EmbeddingPair plain = coin::encode(g, p, init);
  CHECK(oracle::max_abs_diff(t2.value(out_eval.u), plain.u) == 0.0);
  CHECK(oracle::max_abs_diff(t2.value(out_eval.v), plain.v) == 0.0);
  CHECK(oracle::max_abs_diff(t1.value(out_train.u), plain.u) > 1e-6);

  CHECK_THROWS_AS(coin::encode(t2, g, e2, t2.leaf(init.u), t2.leaf(init.v), 0.5, true, nullptr),
                  std::invalid_argument);
}

}  // TEST_SUITE
