#pragma once

// Small dense row-major matrix of doubles plus the handful of kernels the
// probes need. Loops are ordered so the inner dimension is contiguous; every
// kernel accumulates in a fixed order, making results reproducible run to run.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "probeforge/rng.hpp"

namespace probeforge {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool operator==(const Matrix& other) const {
    return same_shape(other) && data_ == other.data_;
  }

  void fill(double value) { data_.assign(data_.size(), value); }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline void check_shapes(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

// C = A * B (or C += with accumulate). i-p-j order; the j loop vectorizes.
inline void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  check_shapes(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "gemm_nn");
  if (!accumulate) c.fill(0.0);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = arow[p];
      if (ap == 0.0) continue;
      const double* brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

// C = A^T * B. p-i-j order: per shared index p, axpy rows of B into C.
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  check_shapes(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "gemm_tn");
  if (!accumulate) c.fill(0.0);
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a.row(p);
    const double* brow = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      if (api == 0.0) continue;
      double* crow = c.row(i);
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// C = A * B^T, via an explicit transpose so the hot path stays gemm_nn.
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false) {
  const Matrix bt = transpose(b);
  gemm_nn(a, bt, c, accumulate);
}

// y = A * x
inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  check_shapes(a.cols() == x.size(), "matvec");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline void add_row_inplace(Matrix& m, std::span<const double> v) {
  check_shapes(m.cols() == v.size(), "add_row_inplace");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] += v[j];
  }
}

inline std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> sums(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) sums[j] += row[j];
  }
  return sums;
}

inline void relu_inplace(Matrix& m) {
  for (double& x : m.flat())
    if (x < 0.0) x = 0.0;
}

// dA = dH where the pre-activation was positive, else 0.
inline void relu_backward_inplace(Matrix& grad, const Matrix& preact) {
  check_shapes(grad.same_shape(preact), "relu_backward_inplace");
  auto g = grad.flat();
  auto a = preact.flat();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (a[i] <= 0.0) g[i] = 0.0;
}

inline double frobenius_sq(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.flat()) acc += x * x;
  return acc;
}

inline void fill_gaussian(Matrix& m, Rng& rng, double scale = 1.0) {
  for (double& x : m.flat()) x = rng.next_gaussian() * scale;
}

// Square orthonormal matrix: Gaussian fill, then modified Gram-Schmidt.
inline Matrix random_orthonormal(std::size_t d, std::uint64_t seed) {
  Matrix q(d, d);
  Rng rng(seed);
  fill_gaussian(q, rng);
  for (std::size_t i = 0; i < d; ++i) {
    double* qi = q.row(i);
    for (std::size_t p = 0; p < i; ++p) {
      const double* qp = q.row(p);
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += qi[j] * qp[j];
      for (std::size_t j = 0; j < d; ++j) qi[j] -= dot * qp[j];
    }
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm_sq += qi[j] * qi[j];
    if (norm_sq <= 0.0) throw std::runtime_error("random_orthonormal: degenerate draw");
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < d; ++j) qi[j] *= inv;
  }
  return q;
}

}  // namespace probeforge
