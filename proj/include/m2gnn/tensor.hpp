#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "m2gnn/error.hpp"

namespace m2gnn {

// Dense row-major matrix of 64-bit reals. Vectors are 1 x n rows.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ContractError("tensor data does not match shape");
  }

  static Tensor row(std::initializer_list<double> v) { return Tensor(1, v.size(), std::vector<double>(v)); }
  static Tensor column(std::initializer_list<double> v) { return Tensor(v.size(), 1, std::vector<double>(v)); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> v) {
    return Tensor(rows, cols, std::vector<double>(v));
  }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (!same_shape(o)) {
      throw ContractError(std::string("shape mismatch in ") + what + ": " + shape_string() + " vs " +
                          o.shape_string());
    }
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

// out += op(a) * op(b), where op transposes when the flag is set.
inline void gemm_accumulate(Tensor& out, const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb || out.rows() != m || out.cols() != n) {
    throw ContractError("matmul shape mismatch: " + a.shape_string() + (ta ? "^T" : "") + " * " +
                        b.shape_string() + (tb ? "^T" : "") + " -> " + out.shape_string());
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? A[p * lda + i] : A[i * lda + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = B + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * ldb + p];
      }
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
  Tensor out(ta ? a.cols() : a.rows(), tb ? b.rows() : b.cols());
  gemm_accumulate(out, a, ta, b, tb);
  return out;
}

// Constant sparse matrix in compressed-row form. Used for mean aggregation over
// neighbor lists and for row gathers.
struct SparseRows {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> index;
  std::vector<double> value;

  void add_row(std::span<const std::size_t> cols_in_row, std::span<const double> values) {
    for (std::size_t i = 0; i < cols_in_row.size(); ++i) {
      if (cols_in_row[i] >= cols) throw ContractError("sparse column out of range");
      index.push_back(cols_in_row[i]);
      value.push_back(values[i]);
    }
    offsets.push_back(index.size());
    ++rows;
  }

  // Appends a row averaging the given columns (empty row if none).
  template <typename Range>
  void add_mean_row(const Range& columns) {
    const std::size_t n = std::size(columns);
    for (auto c : columns) {
      if (static_cast<std::size_t>(c) >= cols) throw ContractError("sparse column out of range");
      index.push_back(static_cast<std::size_t>(c));
      value.push_back(1.0 / static_cast<double>(n));
    }
    offsets.push_back(index.size());
    ++rows;
  }

  void add_unit_row(std::size_t column, double v = 1.0) {
    if (column >= cols) throw ContractError("sparse column out of range");
    index.push_back(column);
    value.push_back(v);
    offsets.push_back(index.size());
    ++rows;
  }

  void add_empty_row() {
    offsets.push_back(index.size());
    ++rows;
  }
};

inline Tensor spmm(const SparseRows& s, const Tensor& dense) {
  if (s.cols != dense.rows()) throw ContractError("spmm shape mismatch");
  Tensor out(s.rows, dense.cols());
  for (std::size_t r = 0; r < s.rows; ++r) {
    auto orow = out.row_span(r);
    for (std::size_t k = s.offsets[r]; k < s.offsets[r + 1]; ++k) {
      const auto src = dense.row_span(s.index[k]);
      const double v = s.value[k];
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += v * src[j];
    }
  }
  return out;
}

}  // namespace m2gnn
