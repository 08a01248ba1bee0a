// Copyright 2026 The whitenlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "whitenlab/error.hpp"

namespace whitenlab {

// Dense row-major matrix of doubles. A default-constructed Matrix is empty
// and only serves as a "no value" placeholder; every sized matrix has at
// least one row and one column.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
      throw Error(Errc::InvalidArgument, "matrix dimensions must be positive");
    }
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
      throw Error(Errc::InvalidArgument, "matrix dimensions must be positive");
    }
    if (data_.size() != rows * cols) {
      throw Error(Errc::ShapeMismatch, "data length does not match rows*cols");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "non-finite matrix entry");
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) {
      throw Error(Errc::InvalidArgument, "matrix dimensions must be positive");
    }
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(Errc::ShapeMismatch, "ragged initializer");
      for (double v : r) {
        if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "non-finite matrix entry");
        data_.push_back(v);
      }
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diag(std::span<const double> values) {
    Matrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  static Matrix column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  double scalar() const {
    if (rows_ != 1 || cols_ != 1) throw Error(Errc::ShapeMismatch, "expected a 1x1 matrix");
    return data_[0];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void require_same(const Matrix& o, const char* what) const {
    if (!same_shape(o)) {
      throw Error(Errc::ShapeMismatch, std::string("operand shapes differ in ") + what);
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }
inline Matrix operator-(Matrix a) { return a *= -1.0; }

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(Errc::ShapeMismatch, "matmul " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* crow = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(Errc::ShapeMismatch, "matmul_tn " + shape_str(a) + "^T * " + shape_str(b));
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, "matmul_nt " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline Matrix hadamard(Matrix a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, "hadamard");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t k = 0; k < ad.size(); ++k) ad[k] *= bd[k];
  return a;
}

inline double squared_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return s;
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, "max_abs_diff");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

inline double trace(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) s += a(i, i);
  return s;
}

inline double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, "dot");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

inline Matrix symmetrize(const Matrix& a) {
  Matrix s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

// Scales column j of `a` by `s[j]`, i.e. a * diag(s).
inline Matrix scale_cols(Matrix a, std::span<const double> s) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) *= s[j];
  return a;
}

// diag(s) * a
inline Matrix scale_rows(Matrix a, std::span<const double> s) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double& v : a.row(i)) v *= s[i];
  return a;
}

inline Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = a.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline Matrix select_cols(const Matrix& a, std::size_t first, std::size_t count) {
  if (first + count > a.cols()) throw Error(Errc::ShapeMismatch, "select_cols out of range");
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, first + j);
  return out;
}

inline Matrix hcat(std::span<const Matrix> parts) {
  if (parts.empty()) throw Error(Errc::InvalidArgument, "hcat of nothing");
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw Error(Errc::ShapeMismatch, "hcat row mismatch");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, offset + j) = p(i, j);
    offset += p.cols();
  }
  return out;
}

inline Matrix vcat(std::span<const Matrix> parts) {
  if (parts.empty()) throw Error(Errc::InvalidArgument, "vcat of nothing");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) throw Error(Errc::ShapeMismatch, "vcat column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset * out.cols());
    offset += p.rows();
  }
  return out;
}

// Z (I - 11^T/m): subtract each row's mean.
inline Matrix center_rows(Matrix z) {
  const double inv = 1.0 / static_cast<double>(z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) * inv;
    for (double& v : r) v -= mean;
  }
  return z;
}

// (I - 11^T/d) Z: subtract each column's mean.
inline Matrix center_cols(Matrix z) {
  std::vector<double> mean(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) mean[j] += z(i, j);
  for (double& v : mean) v /= static_cast<double>(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) -= mean[j];
  return z;
}

// Solves L X = B for lower-triangular L.
inline Matrix solve_lower(const Matrix& l, const Matrix& b) {
  if (!l.is_square() || l.rows() != b.rows()) throw Error(Errc::ShapeMismatch, "solve_lower");
  Matrix x = b;
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      if (lik == 0.0) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= lik * x(k, j);
    }
    const double inv = 1.0 / l(i, i);
    for (double& v : x.row(i)) v *= inv;
  }
  return x;
}

// Solves L^T X = B for lower-triangular L.
inline Matrix solve_lower_transposed(const Matrix& l, const Matrix& b) {
  if (!l.is_square() || l.rows() != b.rows()) throw Error(Errc::ShapeMismatch, "solve_lower_transposed");
  Matrix x = b;
  const std::size_t n = l.rows();
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      if (lki == 0.0) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) x(ii, j) -= lki * x(k, j);
    }
    const double inv = 1.0 / l(ii, ii);
    for (double& v : x.row(ii)) v *= inv;
  }
  return x;
}

}  // namespace whitenlab
