#pragma once

// Dense row-major matrices and the simplex / inversion primitives the rest of
// the library is built on. Everything is float64 and single-threaded.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "prism/errors.hpp"

namespace prism {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionError("matvec dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    const auto r = a.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = Aᵀ x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw DimensionError("matvec_t dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    const auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

inline Matrix add(const Matrix& a, const Matrix& b, double scale_b = 1.0) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add shape mismatch");
  Matrix c = a;
  auto cf = c.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < cf.size(); ++i) cf[i] += scale_b * bf[i];
  return c;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.flat().size(); ++i)
    m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Max-shifted softmax.
inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("softmax of empty vector");
  if (!all_finite(v)) throw NonFiniteError("softmax input has non-finite entry");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (double& o : out) o /= z;
  return out;
}

// Given y = softmax(x) and upstream gradient g = dL/dy, returns dL/dx.
inline Vector softmax_backward(std::span<const double> y, std::span<const double> g) {
  const double s = dot(y, g);
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (g[i] - s);
  return dx;
}

// Softmax applied independently to each of the M consecutive K-blocks of v.
inline Vector blockwise_softmax(std::span<const double> v, std::size_t blocks, std::size_t block_size) {
  if (blocks == 0 || block_size == 0 || v.size() != blocks * block_size) {
    throw DimensionError("blockwise_softmax expects length " + std::to_string(blocks * block_size) +
                         ", got " + std::to_string(v.size()));
  }
  Vector out;
  out.reserve(v.size());
  for (std::size_t m = 0; m < blocks; ++m) {
    const auto p = softmax(v.subspan(m * block_size, block_size));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Each column of the result is the softmax of the matching logit column, so the
// result is column-stochastic with strictly positive entries.
inline Matrix column_stochastic_from_logits(const Matrix& logits) {
  if (!logits.square() || logits.empty()) throw DimensionError("confusion logits must be square");
  const std::size_t k = logits.rows();
  Matrix b(k, k);
  Vector col(k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < k; ++i) col[i] = logits(i, j);
    const auto s = softmax(col);
    for (std::size_t i = 0; i < k; ++i) b(i, j) = s[i];
  }
  return b;
}

// Backward of column_stochastic_from_logits: given B and dL/dB, returns dL/dlogits.
inline Matrix column_stochastic_backward(const Matrix& b, const Matrix& grad_b) {
  const std::size_t k = b.rows();
  Matrix g(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += b(i, j) * grad_b(i, j);
    for (std::size_t i = 0; i < k; ++i) g(i, j) = b(i, j) * (grad_b(i, j) - s);
  }
  return g;
}

// Induced 1-norm (max column absolute sum) of I - B.
inline double neumann_guard_norm(const Matrix& b) {
  if (!b.square()) throw DimensionError("neumann_inverse needs a square matrix");
  double worst = 0.0;
  for (std::size_t j = 0; j < b.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < b.rows(); ++i) s += std::abs((i == j ? 1.0 : 0.0) - b(i, j));
    worst = std::max(worst, s);
  }
  return worst;
}

inline bool neumann_applicable(const Matrix& b) { return neumann_guard_norm(b) < 1.0; }

// Truncated Neumann series sum_{t=0}^{order} (I - B)^t, evaluated in Horner form
// S <- I + (I - B) S. Throws NeumannGuardError when ||I - B||_1 >= 1; callers
// fall back to exact_inverse.
inline Matrix neumann_inverse(const Matrix& b, std::size_t order) {
  if (!b.square()) throw DimensionError("neumann_inverse needs a square matrix");
  const double g = neumann_guard_norm(b);
  if (!(g < 1.0)) {
    throw NeumannGuardError("||I - B||_1 = " + std::to_string(g) + " >= 1");
  }
  const std::size_t k = b.rows();
  const Matrix e = add(Matrix::identity(k), b, -1.0);
  Matrix s = Matrix::identity(k);
  for (std::size_t t = 0; t < order; ++t) s = add(Matrix::identity(k), matmul(e, s));
  return s;
}

inline constexpr double kPivotTolerance = 1e-12;

// Gauss-Jordan elimination with partial pivoting.
inline Matrix exact_inverse(const Matrix& b) {
  if (!b.square()) throw DimensionError("exact_inverse needs a square matrix");
  const std::size_t n = b.rows();
  Matrix a = b;
  Matrix inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (!(std::abs(a(piv, c)) >= kPivotTolerance)) {
      throw SingularMatrixError("pivot " + std::to_string(a(piv, c)) + " in column " +
                                std::to_string(c));
    }
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(a(c, j), a(piv, j));
        std::swap(inv(c, j), inv(piv, j));
      }
    }
    const double d = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= d;
      inv(c, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

}  // namespace prism
