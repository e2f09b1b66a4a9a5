#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "coin/parallel.hpp"

namespace coin {

// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xn,
// column vectors nx1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols, 0.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.rows_, t.cols_, 0.0); }
  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v_[0] = x;
    return t;
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != t.cols_) throw std::invalid_argument("from_rows: ragged rows");
      std::size_t c = 0;
      for (double x : row) t(r, c++) = x;
      ++r;
    }
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return v_.size(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row(std::size_t r) { return v_.data() + r * cols_; }
  const double* row(std::size_t r) const { return v_.data() + r * cols_; }

  double item() const {
    if (!is_scalar()) throw std::logic_error("item: tensor is " + shape_str() + ", not scalar");
    return v_[0];
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap emap(const Tensor& t) {
  return ECMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline EMap emap(Tensor& t) {
  return EMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

constexpr std::size_t kParallelFlops = 1u << 22;
}  // namespace detail

// out (+)= a * b
inline void matmul_nn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " * " + b.shape_str());
  if (!accumulate) out = Tensor::zeros(a.rows(), b.cols());
  std::size_t flops = a.rows() * a.cols() * b.cols();
  auto run = [&](std::size_t r0, std::size_t r1) {
    if (r0 == r1) return;
    auto ai = static_cast<Eigen::Index>(r0);
    auto an = static_cast<Eigen::Index>(r1 - r0);
    detail::emap(out).middleRows(ai, an).noalias() +=
        detail::emap(a).middleRows(ai, an) * detail::emap(b);
  };
  if (flops >= detail::kParallelFlops)
    parallel_for(a.rows(), 16, run);
  else
    run(0, a.rows());
}

// out (+)= a^T * b
inline void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: incompatible shapes " + a.shape_str() + "^T * " + b.shape_str());
  if (!accumulate) out = Tensor::zeros(a.cols(), b.cols());
  std::size_t flops = a.cols() * a.rows() * b.cols();
  auto run = [&](std::size_t r0, std::size_t r1) {
    if (r0 == r1) return;
    auto ci = static_cast<Eigen::Index>(r0);
    auto cn = static_cast<Eigen::Index>(r1 - r0);
    detail::emap(out).middleRows(ci, cn).noalias() +=
        detail::emap(a).middleCols(ci, cn).transpose() * detail::emap(b);
  };
  if (flops >= detail::kParallelFlops)
    parallel_for(a.cols(), 8, run);
  else
    run(0, a.cols());
}

// out (+)= a * b^T
inline void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: incompatible shapes " + a.shape_str() + " * " + b.shape_str() + "^T");
  if (!accumulate) out = Tensor::zeros(a.rows(), b.rows());
  std::size_t flops = a.rows() * a.cols() * b.rows();
  auto run = [&](std::size_t r0, std::size_t r1) {
    if (r0 == r1) return;
    auto ai = static_cast<Eigen::Index>(r0);
    auto an = static_cast<Eigen::Index>(r1 - r0);
    detail::emap(out).middleRows(ai, an).noalias() +=
        detail::emap(a).middleRows(ai, an) * detail::emap(b).transpose();
  };
  if (flops >= detail::kParallelFlops)
    parallel_for(a.rows(), 16, run);
  else
    run(0, a.rows());
}

inline Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

// Compressed sparse rows; column indices strictly increasing within a row.
struct SparseMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> row_ptr;  // size rows+1
  std::vector<std::uint32_t> col_idx;
  std::vector<double> val;

  std::size_t nnz() const { return col_idx.size(); }

  static SparseMatrix from_coo(std::size_t rows, std::size_t cols,
                               const std::vector<std::pair<std::uint32_t, std::uint32_t>>& entries,
                               const std::vector<double>* values = nullptr) {
    if (values && values->size() != entries.size())
      throw std::invalid_argument("from_coo: values size mismatch");
    SparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return entries[x] < entries[y];
    });
    m.row_ptr.assign(rows + 1, 0);
    m.col_idx.reserve(entries.size());
    m.val.reserve(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto [r, c] = entries[order[i]];
      if (r >= rows || c >= cols) throw std::out_of_range("from_coo: entry out of bounds");
      if (i > 0 && entries[order[i]] == entries[order[i - 1]])
        throw std::invalid_argument("from_coo: duplicate entry");
      m.row_ptr[r + 1]++;
      m.col_idx.push_back(c);
      m.val.push_back(values ? (*values)[order[i]] : 1.0);
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
    return m;
  }

  Tensor to_dense() const {
    Tensor d(rows, cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = row_ptr[r]; i < row_ptr[r + 1]; ++i) d(r, col_idx[i]) = val[i];
    return d;
  }
};

// out = s * d
inline void spmm(const SparseMatrix& s, const Tensor& d, Tensor& out) {
  if (s.cols != d.rows())
    throw std::invalid_argument("spmm: incompatible shapes " + std::to_string(s.rows) + "x" +
                                std::to_string(s.cols) + " * " + d.shape_str());
  out = Tensor::zeros(s.rows, d.cols());
  std::size_t width = d.cols();
  auto run = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      double* orow = out.row(r);
      for (std::size_t i = s.row_ptr[r]; i < s.row_ptr[r + 1]; ++i) {
        double w = s.val[i];
        const double* drow = d.row(s.col_idx[i]);
        for (std::size_t c = 0; c < width; ++c) orow[c] += w * drow[c];
      }
    }
  };
  if (s.nnz() * width >= detail::kParallelFlops)
    parallel_for(s.rows, 32, run);
  else
    run(0, s.rows);
}

// out (+)= s^T * d. Rows of s are scattered into out; the column range is
// split across workers so accumulation order per output element is fixed.
inline void spmm_t(const SparseMatrix& s, const Tensor& d, Tensor& out, bool accumulate = false) {
  if (s.rows != d.rows())
    throw std::invalid_argument("spmm_t: incompatible shapes");
  if (!accumulate) out = Tensor::zeros(s.cols, d.cols());
  std::size_t width = d.cols();
  auto run = [&](std::size_t c0, std::size_t c1) {
    for (std::size_t r = 0; r < s.rows; ++r) {
      const double* drow = d.row(r);
      for (std::size_t i = s.row_ptr[r]; i < s.row_ptr[r + 1]; ++i) {
        double w = s.val[i];
        double* orow = out.row(s.col_idx[i]);
        for (std::size_t c = c0; c < c1; ++c) orow[c] += w * drow[c];
      }
    }
  };
  if (s.nnz() * width >= detail::kParallelFlops && width >= 8)
    parallel_for(width, 8, run);
  else
    run(0, width);
}

}  // namespace coin
