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

// Symmetric eigendecomposition (cyclic Jacobi), Cholesky, SVD (one-sided
// Jacobi) and the vector-Jacobian products of the first two.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"

namespace whitenlab {

struct SymEig {
  std::vector<double> values;  // descending
  Matrix vectors;              // column k pairs with values[k]
};

struct CholFactor {
  Matrix lower;
};

struct Svd {
  Matrix left;                  // rows x k, orthonormal columns
  std::vector<double> singular; // k = min(rows, cols), descending
  Matrix rightT;                // k x cols, orthonormal rows
};

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr int kMaxJacobiSweeps = 100;

inline double relative_asymmetry(const Matrix& a) {
  const double scale = max_abs(a);
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  return worst / scale;
}

namespace detail {

inline void require_symmetric(const Matrix& a, const char* who) {
  if (!a.is_square()) throw Error(Errc::NonSquare, std::string(who) + " needs a square matrix, got " + shape_str(a));
  if (relative_asymmetry(a) > kSymmetryTol) {
    throw Error(Errc::Asymmetric, std::string(who) + " input is not symmetric");
  }
}

// Flip each column so its largest-magnitude entry is positive. Ties go to
// the lowest row index.
inline void canonicalize_signs(Matrix& v) {
  for (std::size_t j = 0; j < v.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.rows(); ++i)
      if (std::abs(v(i, j)) > std::abs(v(best, j))) best = i;
    if (v(best, j) < 0.0)
      for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
  }
}

}  // namespace detail

inline SymEig sym_eig(const Matrix& input) {
  detail::require_symmetric(input, "sym_eig");
  const std::size_t n = input.rows();
  Matrix a = symmetrize(input);
  Matrix v = Matrix::identity(n);

  const double total = frobenius_norm(a);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
    return std::sqrt(2.0 * s);
  };

  // Off-diagonal rounding noise grows like n*eps*||A||.
  const double stop = static_cast<double>(std::max<std::size_t>(n, 1)) * std::numeric_limits<double>::epsilon() * total;
  int sweep = 0;
  if (total > 0.0) {
    for (; sweep < kMaxJacobiSweeps; ++sweep) {
      if (off_norm() <= stop) break;
      for (std::size_t p = 0; p + 1 < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
          const double apq = a(p, q);
          if (apq == 0.0) continue;
          const double app = a(p, p);
          const double aqq = a(q, q);
          // Skip rotations that cannot change the diagonal at working precision.
          if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
            a(p, q) = a(q, p) = 0.0;
            continue;
          }
          const double theta = (aqq - app) / (2.0 * apq);
          const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;
          for (std::size_t k = 0; k < n; ++k) {
            const double akp = a(k, p);
            const double akq = a(k, q);
            a(k, p) = c * akp - s * akq;
            a(k, q) = s * akp + c * akq;
          }
          for (std::size_t k = 0; k < n; ++k) {
            const double apk = a(p, k);
            const double aqk = a(q, k);
            a(p, k) = c * apk - s * aqk;
            a(q, k) = s * apk + c * aqk;
          }
          a(p, q) = a(q, p) = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
    if (sweep == kMaxJacobiSweeps && off_norm() > stop) {
      throw Error(Errc::NonConvergence, "sym_eig: Jacobi sweeps exhausted");
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEig out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  detail::canonicalize_signs(out.vectors);
  return out;
}

inline Matrix reconstruct(const SymEig& e) {
  return matmul_nt(scale_cols(e.vectors, e.values), e.vectors);
}

inline CholFactor cholesky(const Matrix& a) {
  detail::require_symmetric(a, "cholesky");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = a(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw Error(Errc::NotPositiveDefinite, "cholesky: nonpositive pivot at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return {std::move(l)};
}

namespace detail {

// Hestenes one-sided Jacobi on the columns of a tall (rows >= cols) matrix.
inline Svd svd_tall(const Matrix& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  Matrix u = transpose(a);  // work on rows of u == columns of a, contiguous
  Matrix v = Matrix::identity(c);
  // Scale to unit max entry so tiny columns do not underflow in alpha*beta.
  const double scale = max_abs(a);
  if (scale > 0.0) u *= 1.0 / scale;
  // Rounding in a length-r dot product is about r*eps relative; a tighter
  // stopping test can cycle forever on nearly dependent columns.
  const double tol = std::max(1.0, static_cast<double>(r)) * std::numeric_limits<double>::epsilon();

  // Columns below eps * ||A||_F are noise; rotating them only chases
  // denormals, whose products underflow and never pass the test.
  const double negligible = std::numeric_limits<double>::epsilon() * frobenius_norm(u);
  const double negligible2 = negligible * negligible;

  bool rotated = true;
  int sweep = 0;
  for (; rotated && sweep < 2 * kMaxJacobiSweeps; ++sweep) {
    rotated = false;
    for (std::size_t p = 0; p + 1 < c; ++p) {
      for (std::size_t q = p + 1; q < c; ++q) {
        auto up = u.row(p);
        auto uq = u.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < r; ++k) {
          alpha += up[k] * up[k];
          beta += uq[k] * uq[k];
          gamma += up[k] * uq[k];
        }
        if (alpha <= negligible2 || beta <= negligible2) continue;
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t k = 0; k < r; ++k) {
          const double x = up[k];
          const double y = uq[k];
          up[k] = cs * x - sn * y;
          uq[k] = sn * x + cs * y;
        }
        auto vp = v.row(p);
        auto vq = v.row(q);
        for (std::size_t k = 0; k < c; ++k) {
          const double x = vp[k];
          const double y = vq[k];
          vp[k] = cs * x - sn * y;
          vq[k] = sn * x + cs * y;
        }
      }
    }
  }
  if (rotated) throw Error(Errc::NonConvergence, "svd: one-sided Jacobi sweeps exhausted");

  std::vector<double> sigma(c);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (double x : u.row(j)) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  if (scale > 0.0) {
    u *= scale;
    for (double& x : sigma) x *= scale;
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  Svd out{Matrix(r, c), std::vector<double>(c), Matrix(c, c)};
  const double floor = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-13 * static_cast<double>(r);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    out.singular[k] = sigma[j];
    for (std::size_t i = 0; i < c; ++i) out.rightT(k, i) = v(j, i);
  }
  // Left vectors: normalized columns, re-orthogonalized; columns with a
  // negligible singular value are completed from the standard basis.
  std::size_t next_basis = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    std::vector<double> col(r, 0.0);
    bool usable = sigma[j] > floor && sigma[j] > 0.0;
    if (usable)
      for (std::size_t i = 0; i < r; ++i) col[i] = u(j, i) / sigma[j];
    for (int attempt = 0;; ++attempt) {
      if (!usable) {
        std::fill(col.begin(), col.end(), 0.0);
        col[next_basis++ % r] = 1.0;
      }
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t prev = 0; prev < k; ++prev) {
          double proj = 0.0;
          for (std::size_t i = 0; i < r; ++i) proj += out.left(i, prev) * col[i];
          for (std::size_t i = 0; i < r; ++i) col[i] -= proj * out.left(i, prev);
        }
      }
      double norm = 0.0;
      for (double x : col) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5 || (usable && norm > 1e-8)) {
        for (std::size_t i = 0; i < r; ++i) out.left(i, k) = col[i] / norm;
        break;
      }
      usable = false;
      if (attempt > static_cast<int>(2 * r)) throw Error(Errc::NonConvergence, "svd: basis completion failed");
    }
  }
  return out;
}

}  // namespace detail

inline Svd svd(const Matrix& a) {
  if (a.rows() >= a.cols()) return detail::svd_tall(a);
  Svd t = detail::svd_tall(transpose(a));
  return {transpose(t.rightT), std::move(t.singular), transpose(t.left)};
}

inline double gap_floor(const std::vector<double>& values) {
  double scale = 1.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  return 1e-8 * scale;
}

/// Adjoint of A -> (values, vectors) for symmetric A. Either gradient may be
/// an empty Matrix / empty vector meaning zero. The result is symmetrized.
/// Throws DegenerateSpectrum if eigenvector gradients are present and two
/// eigenvalues are closer than gap_floor.
inline Matrix sym_eig_vjp(const Matrix& a, const SymEig& eig, const std::vector<double>& grad_values,
                          const Matrix& grad_vectors) {
  const std::size_t n = eig.values.size();
  if (!a.is_square() || a.rows() != n) throw Error(Errc::ShapeMismatch, "sym_eig_vjp: eig does not match A");
  Matrix inner(n, n);
  if (!grad_values.empty()) {
    if (grad_values.size() != n) throw Error(Errc::ShapeMismatch, "sym_eig_vjp: grad_values size");
    for (std::size_t i = 0; i < n; ++i) inner(i, i) = grad_values[i];
  }
  if (!grad_vectors.empty() && max_abs(grad_vectors) > 0.0) {
    if (!grad_vectors.same_shape(eig.vectors)) throw Error(Errc::ShapeMismatch, "sym_eig_vjp: grad_vectors shape");
    const double floor = gap_floor(eig.values);
    Matrix ut_g = matmul_tn(eig.vectors, grad_vectors);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double gap = eig.values[j] - eig.values[i];
        if (std::abs(gap) < floor) {
          throw Error(Errc::DegenerateSpectrum, "eigenvalue gap " + std::to_string(std::abs(gap)) +
                                                    " below floor " + std::to_string(floor));
        }
        inner(i, j) += ut_g(i, j) / gap;
      }
    }
  }
  return symmetrize(matmul_nt(matmul(eig.vectors, inner), eig.vectors));
}

/// Adjoint of the Cholesky map restricted to symmetric perturbations.
inline Matrix cholesky_vjp(const Matrix& a, const CholFactor& factor, const Matrix& grad_lower) {
  const Matrix& l = factor.lower;
  const std::size_t n = l.rows();
  if (!a.same_shape(l) || !grad_lower.same_shape(l)) throw Error(Errc::ShapeMismatch, "cholesky_vjp");
  Matrix p = matmul_tn(l, grad_lower);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) p(i, j) = 0.0;
    p(i, i) *= 0.5;
  }
  // L^{-T} P L^{-1}
  Matrix x = solve_lower_transposed(l, p);
  Matrix s = transpose(solve_lower_transposed(l, transpose(x)));
  return symmetrize(s);
}

}  // namespace whitenlab
