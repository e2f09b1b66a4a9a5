#include <doctest.h>

#include <cmath>
#include <set>

#include "coin/autodiff.hpp"
#include "coin/parallel.hpp"
#include "coin/rng.hpp"
#include "coin/tensor.hpp"
#include "support.hpp"

using coin::RngStream;
using coin::SparseMatrix;
using coin::Tape;
using coin::Tensor;
using coin::Var;

TEST_SUITE("test_tensor_autodiff") {

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.numel() == 6);
  CHECK(t(1, 2) == 6.0);
  CHECK(t[3] == 4.0);
  CHECK(t.row(1)[0] == 4.0);
  CHECK(Tensor::scalar(7.0).item() == 7.0);
  CHECK_THROWS_AS((void)t.item(), std::logic_error);
  CHECK(Tensor::zeros_like(t).same_shape(t));
  Tensor tt = coin::transpose(t);
  CHECK(tt.rows() == 3);
  CHECK(tt(2, 1) == 6.0);
  CHECK(t.all_finite());
  t(0, 0) = std::nan("");
  CHECK(!t.all_finite());
}

TEST_CASE("dense matmul matches naive triple loop") {
  RngStream rng(11);
  Tensor a = oracle::random_tensor(5, 7, rng);
  Tensor b = oracle::random_tensor(7, 4, rng);
  Tensor c;
  coin::matmul_nn(a, b, c);
  CHECK(oracle::max_abs_diff(c, oracle::matmul_naive(a, b)) < 1e-13);

  Tensor at = oracle::transpose_naive(a);
  Tensor c2;
  coin::matmul_tn(at, b, c2);
  CHECK(oracle::max_abs_diff(c2, c) < 1e-13);

  Tensor bt = oracle::transpose_naive(b);
  Tensor c3;
  coin::matmul_nt(a, bt, c3);
  CHECK(oracle::max_abs_diff(c3, c) < 1e-13);

  Tensor acc = oracle::random_tensor(5, 4, rng);
  Tensor expect = acc;
  for (std::size_t i = 0; i < expect.numel(); ++i) expect[i] += c[i];
  coin::matmul_nn(a, b, acc, true);
  CHECK(oracle::max_abs_diff(acc, expect) < 1e-13);
}

TEST_CASE("sparse matrix construction and products") {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> coo{{2, 1}, {0, 3}, {0, 0}, {2, 3}};
  std::vector<double> vals{5.0, 7.0, 1.0, 2.0};
  SparseMatrix s = SparseMatrix::from_coo(3, 4, coo, &vals);
  CHECK(s.nnz() == 4);
  // rows sorted, columns sorted within rows
  CHECK(s.col_idx[0] == 0);
  CHECK(s.col_idx[1] == 3);
  CHECK(s.val[1] == 7.0);

  Tensor dense(3, 4);
  dense(2, 1) = 5.0;
  dense(0, 3) = 7.0;
  dense(0, 0) = 1.0;
  dense(2, 3) = 2.0;

  RngStream rng(3);
  Tensor x = oracle::random_tensor(4, 6, rng);
  Tensor y;
  coin::spmm(s, x, y);
  CHECK(oracle::max_abs_diff(y, oracle::matmul_naive(dense, x)) < 1e-13);

  Tensor g = oracle::random_tensor(3, 6, rng);
  Tensor z;
  coin::spmm_t(s, g, z);
  CHECK(oracle::max_abs_diff(z, oracle::matmul_naive(oracle::transpose_naive(dense), g)) < 1e-13);

  CHECK_THROWS_AS(SparseMatrix::from_coo(3, 4, {{0, 0}, {0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(SparseMatrix::from_coo(3, 4, {{3, 0}}), std::out_of_range);
  CHECK_THROWS_AS(SparseMatrix::from_coo(3, 4, {{0, 4}}), std::out_of_range);
}

TEST_CASE("thread override keeps results bitwise identical") {
  RngStream rng(21);
  Tensor a = oracle::random_tensor(33, 17, rng);
  Tensor b = oracle::random_tensor(17, 9, rng);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> coo;
  for (std::uint32_t i = 0; i < 33; ++i) coo.emplace_back(i, i % 17);
  SparseMatrix s = SparseMatrix::from_coo(33, 17, coo);

  coin::set_thread_override(1);
  Tensor c1, y1;
  coin::matmul_nn(a, b, c1);
  coin::spmm(s, b, y1);
  coin::set_thread_override(4);
  Tensor c4, y4;
  coin::matmul_nn(a, b, c4);
  coin::spmm(s, b, y4);
  coin::set_thread_override(0);
  for (std::size_t i = 0; i < c1.numel(); ++i) CHECK(c1[i] == c4[i]);
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y4[i]);
}

TEST_CASE("rng streams are deterministic and derived streams differ") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  RngStream d1 = RngStream::derive(42, "negatives");
  RngStream d2 = RngStream::derive(42, "negatives");
  RngStream d3 = RngStream::derive(42, "dropout");
  bool all_equal = true, any_equal_cross = true;
  for (int i = 0; i < 16; ++i) {
    double x = d1.uniform(), y = d2.uniform(), z = d3.uniform();
    all_equal = all_equal && (x == y);
    any_equal_cross = any_equal_cross && (x == z);
  }
  CHECK(all_equal);
  CHECK(!any_equal_cross);
}

TEST_CASE("uniform samples live in [0,1) with the right mean") {
  RngStream rng(7);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    sum += x;
  }
  double mean = sum / n;
  double sigma = std::sqrt(1.0 / 12.0 / n);
  CHECK(std::fabs(mean - 0.5) < 4.0 * sigma);
}

TEST_CASE("uniform_int covers the range without bias") {
  RngStream rng(9);
  const int n = 40000;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    std::uint64_t k = rng.uniform_int(5);
    REQUIRE(k < 5);
    ++counts[k];
  }
  double expect = n / 5.0;
  double sigma = std::sqrt(n * 0.2 * 0.8);
  for (int c : counts) CHECK(std::fabs(c - expect) < 5.0 * sigma);
  CHECK_THROWS_AS((void)rng.uniform_int(0), std::invalid_argument);
}

static double gc(std::vector<Tensor> params,
                 std::function<Var(Tape&, const std::vector<Var>&)> build) {
  return coin::gradient_check(std::move(params), build);
}

TEST_CASE("per-op gradients match finite differences") {
  RngStream rng(101);
  Tensor a = oracle::random_tensor(3, 4, rng);
  Tensor b = oracle::random_tensor(4, 2, rng);
  Tensor c = oracle::random_tensor(3, 2, rng);
  Tensor row = oracle::random_tensor(1, 2, rng);

  CHECK(gc({a, b}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh_op(t.matmul(v[0], v[1])));
        }) < 1e-6);
  CHECK(gc({a, c}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.sigmoid(t.matmul_tn_op(v[0], v[1])));
        }) < 1e-6);
  CHECK(gc({c, c}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.multiply(t.concat_columns(v[0], v[1]), t.concat_columns(v[1], v[0])));
        }) < 1e-6);
  CHECK(gc({c, row}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh_op(t.add(v[0], v[1])));  // broadcast add
        }) < 1e-6);
  CHECK(gc({c, c}, [](Tape& t, const std::vector<Var>& v) {
          return t.mean(t.multiply(t.add(v[0], v[1]), t.scale(v[0], -1.7)));
        }) < 1e-6);
  // keep leaky_relu inputs away from the kink
  Tensor far = oracle::random_tensor(3, 3, rng);
  for (std::size_t i = 0; i < far.numel(); ++i) far[i] += far[i] > 0 ? 0.5 : -0.5;
  CHECK(gc({far}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.leaky_relu(v[0], 0.1));
        }) < 1e-6);
  CHECK(gc({c}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.exp_op(t.scale(v[0], 0.3)));
        }) < 1e-6);
  Tensor pos = oracle::random_tensor(3, 3, rng, 0.5, 2.0);
  CHECK(gc({pos}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.log_clamped(v[0]));
        }) < 1e-6);
  CHECK(gc({a}, [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.multiply(t.softmax_rows(v[0]), t.softmax_rows(t.scale(v[0], -1.0))));
        }) < 1e-6);
  auto spm = std::make_shared<SparseMatrix>(
      SparseMatrix::from_coo(2, 3, {{0, 0}, {0, 2}, {1, 1}}));
  CHECK(gc({a}, [spm](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh_op(t.spmm_op(spm, v[0])));
        }) < 1e-6);
}

TEST_CASE("fan-out accumulates gradients") {
  Tape tape;
  Var x = tape.leaf(Tensor::from_rows({{3.0}}), true);
  Var y = tape.add(x, x);
  tape.backward(tape.sum(y));
  CHECK(tape.gradient(x)(0, 0) == 2.0);
}

TEST_CASE("off-path leaves get zero gradients") {
  Tape tape;
  Var x = tape.leaf(Tensor::from_rows({{2.0}}), true);
  Var unused = tape.leaf(Tensor::from_rows({{5.0, 5.0}}), true);
  tape.backward(tape.sum(tape.scale(x, 3.0)));
  Tensor g = tape.gradient(unused);
  CHECK(g.rows() == 1);
  CHECK(g.cols() == 2);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 0.0);
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var x = tape.leaf(Tensor::from_rows({{1.0, 2.0}}), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("dropout scales kept entries and zeroes the rest") {
  Tape tape;
  Tensor ones(4, 8, 1.0);
  Var x = tape.leaf(ones, true);

  RngStream rng(5);
  Var eval_out = tape.dropout(x, 0.5, false, &rng);
  CHECK(eval_out.id == x.id);  // inference: identity, no rng draws

  Var train_out = tape.dropout(x, 0.5, true, &rng);
  Tensor v = tape.value(train_out);  // copy: later ops may reallocate node storage
  std::size_t kept = 0;
  for (std::size_t i = 0; i < v.numel(); ++i) {
    bool zero = v[i] == 0.0, doubled = std::fabs(v[i] - 2.0) < 1e-15;
    REQUIRE((zero || doubled));
    kept += doubled;
  }
  CHECK(kept > 4);
  CHECK(kept < 28);

  tape.backward(tape.sum(train_out));
  Tensor g = tape.gradient(x);
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == v[i]);  // input was all ones

  RngStream r2(99);
  Tape t2;
  Var y = t2.leaf(ones, false);
  Var p0 = t2.dropout(y, 0.0, true, &r2);
  for (std::size_t i = 0; i < ones.numel(); ++i) CHECK(t2.value(p0)[i] == 1.0);
}

TEST_CASE("stable sigmoid endpoints") {
  CHECK(Tape::stable_sigmoid(0.0) == 0.5);
  CHECK(Tape::stable_sigmoid(800.0) == 1.0);
  double tiny = Tape::stable_sigmoid(-800.0);
  CHECK(tiny >= 0.0);
  CHECK(tiny < 1e-300);
  CHECK(std::isfinite(Tape::stable_sigmoid(-800.0)));
}

TEST_CASE("gradient_check flags a corrupted backward rule") {
  RngStream rng(55);
  Tensor a = oracle::random_tensor(2, 3, rng);
  double err = coin::gradient_check({a}, [](Tape& t, const std::vector<Var>& v) {
    Var y = t.tanh_op(v[0]);
    // deliberately wrong backward: scales the true gradient by 1.1
    int id = t.add_node(
        "bad_identity", t.value(y), {y.id},
        [](Tape& tp, int self) {
          const Tensor& g = tp.grad_of(self);
          Tensor& ga = tp.grad_acc(tp.parents1(self));
          for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += 1.1 * g[i];
        },
        false);
    return t.sum(t.wrap(id));
  });
  CHECK(err > 0.05);
}

}  // TEST_SUITE
