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


#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "whitenlab/linalg.hpp"
#include "whitenlab/rng.hpp"
#include "whitenlab/tape.hpp"
#include "test_support.hpp"

namespace whitenlab {
namespace {

using testing_support::random_matrix;
using testing_support::random_spd;
using testing_support::random_symmetric;

TEST(Matrix, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(Matrix(0, 3), Error);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3, NAN}), Error);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error);
  EXPECT_TRUE(Matrix().empty());
}

TEST(Matrix, ProductsAgreeWithTransposes) {
  Rng rng(3);
  Matrix a = random_matrix(4, 5, rng), b = random_matrix(4, 3, rng), c = random_matrix(6, 5, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LT(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-14);
}

TEST(Matrix, TriangularSolves) {
  Matrix l{{2, 0, 0}, {1, 3, 0}, {-1, 0.5, 1.5}};
  Rng rng(4);
  Matrix b = random_matrix(3, 2, rng);
  EXPECT_LT(max_abs_diff(matmul(l, solve_lower(l, b)), b), 1e-14);
  EXPECT_LT(max_abs_diff(matmul(transpose(l), solve_lower_transposed(l, b)), b), 1e-14);
}

TEST(Matrix, CenteringExamples) {
  Matrix z{{1, 3}, {2, 2}};
  EXPECT_EQ(center_rows(z), (Matrix{{-1, 1}, {0, 0}}));
  EXPECT_EQ(center_cols(Matrix{{1}, {3}}), (Matrix{{-1}, {1}}));
  EXPECT_EQ(max_abs(center_rows(Matrix(3, 4, 2.5))), 0.0);
  EXPECT_EQ(max_abs(center_cols(Matrix(3, 4, 2.5))), 0.0);

  Rng rng(5);
  Matrix r = center_rows(random_matrix(4, 8, rng));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += r(i, j);
    EXPECT_LT(std::abs(s), 1e-12);
  }
  Matrix c = center_cols(random_matrix(8, 4, rng));
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 8; ++i) s += c(i, j);
    EXPECT_LT(std::abs(s), 1e-12);
  }
}

TEST(SymEig, Identity) {
  SymEig e = sym_eig(Matrix::identity(3));
  for (double v : e.values) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_LT(max_abs_diff(matmul_tn(e.vectors, e.vectors), Matrix::identity(3)), 1e-14);
}

TEST(SymEig, DiagonalIsSortedSignedPermutation) {
  SymEig e = sym_eig(Matrix{{1, 0}, {0, 4}});
  EXPECT_DOUBLE_EQ(e.values[0], 4.0);
  EXPECT_DOUBLE_EQ(e.values[1], 1.0);
  EXPECT_EQ(e.vectors, (Matrix{{0, 1}, {1, 0}}));
}

TEST(SymEig, TwoByTwoClosedForm) {
  // Characteristic polynomial (2-x)^2 - 1 has roots 3 and 1.
  SymEig e = sym_eig(Matrix{{2, 1}, {1, 2}});
  EXPECT_NEAR(e.values[0], 3.0, 1e-14);
  EXPECT_NEAR(e.values[1], 1.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  for (std::size_t j = 0; j < 2; ++j) {
    // Compare up to column sign.
    const double s = e.vectors(0, j) > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(s * e.vectors(0, j), r, 1e-14);
    EXPECT_NEAR(s * e.vectors(1, j), j == 0 ? r : -r, 1e-14);
  }
}

TEST(SymEig, RejectsBadInput) {
  try {
    sym_eig(Matrix(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonSquare);
  }
  try {
    sym_eig(Matrix{{1, 2}, {2.001, 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Asymmetric);
  }
}

TEST(SymEig, ReconstructionAndOrthonormalityOnRandomMatrices) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(15);
    Matrix a = random_symmetric(n, rng);
    SymEig e = sym_eig(a);
    EXPECT_LT(frobenius_norm(reconstruct(e) - a) / frobenius_norm(a), 1e-10);
    EXPECT_LT(max_abs_diff(matmul_tn(e.vectors, e.vectors), Matrix::identity(n)), 1e-10);
    for (std::size_t i = 1; i < n; ++i) EXPECT_GE(e.values[i - 1], e.values[i]);
    // Sign convention: the largest-magnitude entry of every column is positive.
    for (std::size_t j = 0; j < n; ++j) {
      double best = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(e.vectors(i, j)) > std::abs(best)) best = e.vectors(i, j);
      }
      EXPECT_GT(best, 0.0);
    }
  }
}

TEST(Cholesky, Examples) {
  EXPECT_EQ(cholesky(Matrix::identity(2)).lower, Matrix::identity(2));
  Matrix l = cholesky(Matrix{{4, 2}, {2, 5}}).lower;
  EXPECT_LT(max_abs_diff(l, Matrix{{2, 0}, {1, 2}}), 1e-15);
  try {
    cholesky(Matrix{{1, 2}, {2, 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotPositiveDefinite);
  }
}

TEST(Cholesky, ReconstructsRandomSpd) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = random_spd(2 + rng.uniform_index(10), rng);
    Matrix l = cholesky(a).lower;
    EXPECT_LT(frobenius_norm(matmul_nt(l, l) - a) / frobenius_norm(a), 1e-10);
  }
}

TEST(Svd, Examples) {
  for (double s : svd(Matrix::identity(4)).singular) EXPECT_NEAR(s, 1.0, 1e-15);
  Svd d = svd(Matrix{{3, 0}, {0, 0}});
  EXPECT_NEAR(d.singular[0], 3.0, 1e-15);
  EXPECT_EQ(d.singular[1], 0.0);
  EXPECT_LT(max_abs_diff(matmul_tn(d.left, d.left), Matrix::identity(2)), 1e-14);
}

TEST(Svd, MatchesGramEigenvalues) {
  Rng rng(13);
  Matrix a = random_matrix(3, 5, rng);
  Svd s = svd(a);
  ASSERT_EQ(s.singular.size(), 3u);
  SymEig g = sym_eig(matmul_nt(a, a));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.singular[i], std::sqrt(g.values[i]), 1e-12);
}

TEST(Svd, ReconstructsTallAndWide) {
  Rng rng(14);
  for (auto [r, c] : {std::pair{7, 3}, std::pair{3, 7}, std::pair{5, 5}, std::pair{1, 4}}) {
    Matrix a = random_matrix(r, c, rng);
    Svd s = svd(a);
    const std::size_t k = std::min<std::size_t>(r, c);
    ASSERT_EQ(s.singular.size(), k);
    Matrix rec = matmul(scale_cols(s.left, s.singular), s.rightT);
    EXPECT_LT(max_abs_diff(rec, a), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_tn(s.left, s.left), Matrix::identity(k)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(s.rightT, s.rightT), Matrix::identity(k)), 1e-12);
  }
}

TEST(Svd, RankDeficientKeepsOrthonormalFactors) {
  Rng rng(15);
  Matrix u = random_matrix(6, 2, rng);
  Matrix a = matmul(u, random_matrix(2, 4, rng));  // rank 2
  Svd s = svd(a);
  EXPECT_LT(s.singular[2], 1e-12 * s.singular[0]);
  EXPECT_LT(max_abs_diff(matmul_tn(s.left, s.left), Matrix::identity(4)), 1e-10);
}

// Scalar probe p(A) = sum_i c_i lambda_i + <W, U> for the eigen VJP.
double eig_probe(const Matrix& a, const std::vector<double>& c, const Matrix& w) {
  SymEig e = sym_eig(a);
  double p = dot(w, e.vectors);
  for (std::size_t i = 0; i < c.size(); ++i) p += c[i] * e.values[i];
  return p;
}

// Central differences along symmetric perturbations E_ij + E_ji.
template <class F>
Matrix symmetric_fd(const Matrix& a, F f) {
  const std::size_t n = a.rows();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double h = 1e-5 * (1.0 + std::abs(a(i, j)));
      Matrix p = a, m = a;
      p(i, j) += h;
      m(i, j) -= h;
      if (i != j) {
        p(j, i) += h;
        m(j, i) -= h;
      }
      const double d = (f(p) - f(m)) / (2 * h);
      // For i != j the derivative covers two symmetric entries.
      g(i, j) = g(j, i) = i == j ? d : d / 2;
    }
  }
  return g;
}

TEST(SymEigVjp, ZeroCotangentGivesZero) {
  Matrix a{{3, 1}, {1, 2}};
  SymEig e = sym_eig(a);
  EXPECT_EQ(max_abs(sym_eig_vjp(a, e, {0, 0}, Matrix(2, 2))), 0.0);
}

TEST(SymEigVjp, EigenvalueAdjointIsProjector) {
  Matrix a{{4, 0}, {0, 1}};
  Matrix g = sym_eig_vjp(a, sym_eig(a), {1, 0}, Matrix());
  EXPECT_LT(max_abs_diff(g, Matrix{{1, 0}, {0, 0}}), 1e-15);
}

TEST(SymEigVjp, MatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 4;
    // Well separated spectrum: eigenvalues n, n-1, ... with gap 1.
    Matrix q = svd(random_matrix(n, n, rng)).left;
    std::vector<double> lam(n);
    for (std::size_t i = 0; i < n; ++i) lam[i] = static_cast<double>(n - i) + 0.5;
    Matrix a = symmetrize(matmul_nt(scale_cols(q, lam), q));
    std::vector<double> c(n);
    for (double& v : c) v = rng.normal();
    Matrix w = random_matrix(n, n, rng);
    Matrix analytic = sym_eig_vjp(a, sym_eig(a), c, w);
    Matrix numeric = symmetric_fd(a, [&](const Matrix& x) { return eig_probe(x, c, w); });
    EXPECT_LT(tape::relative_error(analytic, numeric), 1e-5) << "n=" << n;
  }
}

TEST(SymEigVjp, DegenerateSpectrumRaised) {
  Matrix a = Matrix::identity(3);
  try {
    sym_eig_vjp(a, sym_eig(a), {}, Matrix(3, 3, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateSpectrum);
  }
  // Eigenvalue-only cotangents are fine on a degenerate spectrum.
  EXPECT_NO_THROW(sym_eig_vjp(a, sym_eig(a), {1, 1, 1}, Matrix()));
}

TEST(CholeskyVjp, ClosedFormsAtIdentity) {
  Matrix i2 = Matrix::identity(2);
  CholFactor f = cholesky(i2);
  EXPECT_EQ(max_abs(cholesky_vjp(i2, f, Matrix(2, 2))), 0.0);
  EXPECT_LT(max_abs_diff(cholesky_vjp(i2, f, i2), 0.5 * i2), 1e-15);
}

TEST(CholeskyVjp, MatchesFiniteDifferences) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 4;
    Matrix a = random_spd(n, rng);
    Matrix w = random_matrix(n, n, rng);
    auto probe = [&](const Matrix& x) {
      Matrix l = cholesky(x).lower;
      return dot(w, l);
    };
    // Only the lower triangle of L varies; mask W accordingly.
    Matrix wl = w;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) wl(i, j) = 0.0;
    Matrix analytic = cholesky_vjp(a, cholesky(a), wl);
    Matrix numeric = symmetric_fd(a, probe);
    EXPECT_LT(tape::relative_error(analytic, numeric), 1e-5);
  }
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  Rng a(7, "augment"), b(7, "augment"), c(7, "partition");
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(8);
  std::vector<std::size_t> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v.begin(), v.end());
  EXPECT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), 50u);
}

TEST(Rng, NormalMoments) {
  Rng rng(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace whitenlab
