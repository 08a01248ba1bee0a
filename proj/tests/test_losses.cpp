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

#include <functional>

#include "whitenlab/losses.hpp"
#include "test_support.hpp"

namespace whitenlab {
namespace {

using testing_support::random_matrix;

Matrix numeric_grad(const std::function<double(const Matrix&)>& f, const Matrix& x0) {
  Matrix g(x0.rows(), x0.cols());
  for (std::size_t k = 0; k < x0.size(); ++k) {
    const double h = 1e-5 * (1.0 + std::abs(x0.data()[k]));
    Matrix p = x0, m = x0;
    p.data()[k] += h;
    m.data()[k] -= h;
    g.data()[k] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

double sum_components(const LossValue& v) {
  double s = 0;
  for (const auto& [k, c] : v.components) s += c;
  return s;
}

TEST(MseNorm, Examples) {
  Rng rng(1);
  Matrix z = random_matrix(4, 6, rng);
  EXPECT_NEAR(mse_norm_loss(z, z).value, 0.0, 1e-15);
  EXPECT_NEAR(mse_norm_loss(z, -z).value, 4.0, 1e-12);
  Matrix a{{1, 0}, {0, 3}}, b{{0, -2}, {5, 0}};
  EXPECT_NEAR(mse_norm_loss(a, b).value, 2.0, 1e-15);
}

TEST(MseNorm, ScaleInvariantAndBounded) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Matrix a = random_matrix(3, 5, rng), b = random_matrix(3, 5, rng);
    const double v = mse_norm_loss(a, b).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 4.0);
    EXPECT_NEAR(mse_norm_loss(2.5 * a, b).value, v, 1e-12);
    EXPECT_NEAR(mse_norm_loss(b, a).value, v, 1e-14);
  }
}

TEST(MseNorm, ZeroColumnRejected) {
  Matrix a{{1, 0}, {1, 0}}, b{{1, 1}, {1, 1}};
  try {
    mse_norm_loss(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroVector);
  }
}

TEST(WhiteningMse, Examples) {
  Rng rng(3);
  Matrix z = random_matrix(3, 12, rng);
  WhitenOutput w = batch_whiten(z, WhitenMethod::ZCA, 0.0);
  EXPECT_EQ(whitening_mse_loss(w, w).value, 0.0);
  // ||Zw||^2 = m d when (1/m) Zw Zw^T = I, so ||Zw - (-Zw)||^2 / m = 4d.
  EXPECT_NEAR(whitening_mse_loss(w.whitened, -w.whitened).value, 12.0, 1e-10);

  Matrix a = random_matrix(3, 7, rng), b = random_matrix(3, 7, rng);
  double s = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 7; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  EXPECT_NEAR(whitening_mse_loss(a, b).value, s / 7, 1e-14);
}

TEST(ProxyLoss, IsTwiceSymmetricLoss) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    WhitenOutput a = batch_whiten(random_matrix(3, 10, rng), WhitenMethod::ZCA, 0.0);
    WhitenOutput b = batch_whiten(random_matrix(3, 10, rng), WhitenMethod::ZCA, 0.0);
    LossValue p = proxy_whitening_loss(a, b);
    EXPECT_NEAR(p.value, 2.0 * whitening_mse_loss(a, b).value, 1e-12);
    EXPECT_NEAR(sum_components(p), p.value, 1e-12);
    EXPECT_EQ(proxy_whitening_loss(a, a).value, 0.0);
  }
}

TEST(ProxyLoss, GradientsEqualSymmetricLossGradients) {
  Rng rng(5);
  Matrix a = random_matrix(3, 8, rng), b = random_matrix(3, 8, rng);
  auto sym = whitening_mse_loss_grad(a, b);
  auto proxy = proxy_whitening_loss_grad(a, b);
  EXPECT_LT(max_abs_diff(sym.first, proxy.first), 1e-15);
  EXPECT_LT(max_abs_diff(sym.second, proxy.second), 1e-15);
}

TEST(AsymOnline, Examples) {
  Rng rng(6);
  WhitenConfig zca{WhitenMethod::ZCA, std::nullopt, 0, 0.0};
  Matrix z2 = random_matrix(3, 9, rng);
  Matrix target = whiten(z2, zca).whitened;
  EXPECT_LT(asym_online_loss(target, target, zca).value, 1e-20);
  EXPECT_LT(asym_online_loss(z2, target, zca).value, 1e-24);
}

TEST(AsymOnline, FullRankOptimumConstruction) {
  // Z1 = U2 diag(sigma) V2^T shares the singular vectors of the whitened target.
  Rng rng(7);
  WhitenConfig zca{WhitenMethod::ZCA, std::nullopt, 0, 0.0};
  Matrix target = whiten(random_matrix(2, 8, rng), zca).whitened;
  Svd s = svd(target);
  std::vector<double> sigma{2.0, 1.0};
  Matrix z1 = matmul(scale_cols(s.left, sigma), s.rightT);
  EXPECT_LT(asym_online_loss(z1, target, zca).value, 1e-10);
}

TEST(Vicreg, Examples) {
  Rng rng(8);
  WhitenOutput w = batch_whiten(random_matrix(3, 12, rng), WhitenMethod::ZCA, 0.0);
  VicregParams p{1.0, 1.0};
  EXPECT_LT(vicreg_loss(w.whitened, w.whitened, p).value, 1e-20);

  Matrix a = random_matrix(3, 6, rng), b = random_matrix(3, 6, rng);
  EXPECT_NEAR(vicreg_loss(a, b, {0.0, 1.0}).value, whitening_mse_loss(a, b).value, 1e-14);
}

// Elementwise oracle: explicit loops over centered entries.
double vicreg_oracle(const Matrix& z1, const Matrix& z2, double alpha, double lambda) {
  const std::size_t d = z1.rows(), m = z1.cols();
  double align = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < m; ++k) align += (z1(i, k) - z2(i, k)) * (z1(i, k) - z2(i, k));
  align /= static_cast<double>(m);
  double pen = 0;
  for (const Matrix* z : {&z1, &z2}) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < m; ++k) mu[i] += (*z)(i, k);
      mu[i] /= static_cast<double>(m);
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double c = 0;
        for (std::size_t k = 0; k < m; ++k) c += ((*z)(i, k) - mu[i]) * ((*z)(j, k) - mu[j]);
        c = c / static_cast<double>(m) - (i == j ? lambda : 0.0);
        pen += c * c;
      }
  }
  return align + alpha * pen;
}

TEST(Vicreg, MatchesElementwiseOracle) {
  Rng rng(9);
  Matrix a = random_matrix(4, 7, rng), b = random_matrix(4, 7, rng);
  LossValue v = vicreg_loss(a, b, {0.5, 1.0});
  EXPECT_NEAR(v.value, vicreg_oracle(a, b, 0.5, 1.0), 1e-12);
  EXPECT_NEAR(sum_components(v), v.value, 1e-12);
}

TEST(Vicreg, NondecreasingInAlpha) {
  Rng rng(10);
  Matrix a = random_matrix(3, 6, rng), b = random_matrix(3, 6, rng);
  double prev = -1;
  for (double alpha : {0.0, 0.1, 0.5, 1.0, 4.0}) {
    const double v = vicreg_loss(a, b, {alpha, 1.0}).value;
    EXPECT_GE(v, prev);
    prev = v;
  }
}

// Elementwise oracle for the channel covariance penalty.
double channel_cov_oracle(const Matrix& z) {
  const std::size_t d = z.rows(), m = z.cols();
  std::vector<double> mu(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < d; ++i) mu[k] += z(i, k);
    mu[k] /= static_cast<double>(d);
  }
  double c = 0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += (z(i, a) - mu[a]) * (z(i, b) - mu[b]);
      s /= static_cast<double>(d - 1);
      c += s * s;
    }
  return c / static_cast<double>(m);
}

TEST(ChannelCov, Examples) {
  Rng rng(11);
  EXPECT_EQ(channel_cov_loss(random_matrix(5, 1, rng)).value, 0.0);
  WhitenOutput w = channel_whiten(random_matrix(10, 4, rng), 0.0);
  EXPECT_LT(channel_cov_loss(w.whitened).value, 1e-12);

  Matrix z = random_matrix(6, 4, rng);
  for (std::size_t i = 0; i < 6; ++i) z(i, 3) = z(i, 1);
  const double v = channel_cov_loss(z).value;
  EXPECT_GT(v, 0.0);
  EXPECT_NEAR(v, channel_cov_oracle(z), 1e-12);
}

TEST(ChannelCov, ZeroOnEveryCwRgpGroup) {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    WhitenOutput w = cw_rgp(random_matrix(24, 5, rng), make_group_partition(24, 3, PartitionMode::Random, t), 0.0);
    for (const auto& g : w.groups) EXPECT_LT(channel_cov_loss(g.whitened).value, 1e-10);
  }
}

TEST(Multiview, TwoViewsEqualPairLoss) {
  Rng rng(13);
  WhitenConfig cfg{WhitenMethod::ZCA, std::nullopt, 0, 0.0};
  Matrix a = random_matrix(3, 10, rng), b = random_matrix(3, 10, rng);
  ViewSet vs{{{a, 1}, {b, 2}}};
  EXPECT_NEAR(multiview_loss(vs, cfg).value, whitening_mse_loss(whiten(a, cfg), whiten(b, cfg)).value, 1e-14);
  ViewSet same{{{a, 1}, {a, 2}, {a, 3}}};
  EXPECT_EQ(multiview_loss(same, cfg).value, 0.0);
}

TEST(Multiview, FourViewsIsMeanOfSixPairs) {
  Rng rng(14);
  WhitenConfig cfg{WhitenMethod::CW, make_group_partition(16, 2, PartitionMode::Random, 7), 0, 0.0};
  ViewSet vs;
  for (std::size_t v = 0; v < 4; ++v) vs.views.push_back({random_matrix(16, 4, rng), v + 1});
  double total = 0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      total += whitening_mse_loss(whiten(vs.views[a].data, cfg), whiten(vs.views[b].data, cfg)).value;
  EXPECT_NEAR(multiview_loss(vs, cfg).value, total / 6, 1e-12);
}

TEST(Multiview, NeedsTwoViews) {
  Rng rng(15);
  ViewSet vs{{{random_matrix(3, 5, rng), 1}}};
  EXPECT_THROW(multiview_loss(vs, {}), Error);
}

TEST(Losses, SymmetricUnderViewSwap) {
  Rng rng(16);
  Matrix a = random_matrix(5, 4, rng), b = random_matrix(5, 4, rng);
  EXPECT_NEAR(whitening_mse_loss(a, b).value, whitening_mse_loss(b, a).value, 1e-15);
  EXPECT_NEAR(vicreg_loss(a, b, {0.3, 1.0}).value, vicreg_loss(b, a, {0.3, 1.0}).value, 1e-14);
  EXPECT_NEAR(mse_norm_loss(a, b).value, mse_norm_loss(b, a).value, 1e-15);
}

// Every loss gradient against central differences.
TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(17);
  for (int t = 0; t < 5; ++t) {
    Matrix a = random_matrix(4, 7, rng), b = random_matrix(4, 7, rng);
    auto check = [&](const char* what, const Matrix& analytic, const std::function<double(const Matrix&)>& f,
                     const Matrix& at) { EXPECT_LT(tape::relative_error(analytic, numeric_grad(f, at)), 1e-5) << what; };

    auto mn = mse_norm_loss_grad(a, b);
    check("mse_norm/1", mn.first, [&](const Matrix& x) { return mse_norm_loss(x, b).value; }, a);
    check("mse_norm/2", mn.second, [&](const Matrix& x) { return mse_norm_loss(a, x).value; }, b);

    auto wm = whitening_mse_loss_grad(a, b);
    check("whitening_mse/1", wm.first, [&](const Matrix& x) { return whitening_mse_loss(x, b).value; }, a);
    check("whitening_mse/2", wm.second, [&](const Matrix& x) { return whitening_mse_loss(a, x).value; }, b);

    VicregParams p{0.5, 1.0};
    auto vr = vicreg_loss_grad(a, b, p);
    check("vicreg/1", vr.first, [&](const Matrix& x) { return vicreg_loss(x, b, p).value; }, a);
    check("vicreg/2", vr.second, [&](const Matrix& x) { return vicreg_loss(a, x, p).value; }, b);

    check("channel_cov", channel_cov_loss_grad(a), [&](const Matrix& x) { return channel_cov_loss(x).value; }, a);

    for (WhitenMethod m : {WhitenMethod::ZCA, WhitenMethod::CD, WhitenMethod::PCA}) {
      WhitenConfig cfg{m, std::nullopt, 0, 0.0};
      Matrix target = whiten(b, cfg).whitened;
      check("asym_online", asym_online_loss_grad(a, target, cfg),
            [&](const Matrix& x) { return asym_online_loss(x, target, cfg).value; }, a);
    }
  }
}

TEST(LossGradients, TapeOpsAgreeWithDirectGradients) {
  Rng rng(18);
  Matrix a = random_matrix(4, 6, rng), b = random_matrix(4, 6, rng);
  tape::Tape t;
  tape::Slot sa = t.leaf(a), sb = t.leaf(b);
  tape::Slot l = tape::add(t, tape::add(t, record_mse_norm(t, sa, sb), record_whitening_mse(t, sa, sb)),
                           tape::add(t, record_vicreg_penalty(t, sa, 1.0), record_channel_cov(t, sb)));
  EXPECT_NEAR(t.value(l).scalar(),
              mse_norm_loss(a, b).value + whitening_mse_loss(a, b).value + vicreg_penalty(a, 1.0) +
                  channel_cov_loss(b).value,
              1e-12);
  tape::Gradients g = t.backward(l);
  EXPECT_LT(tape::relative_error(g[sa], tape::finite_difference(t, l, sa)), 1e-5);
  EXPECT_LT(tape::relative_error(g[sb], tape::finite_difference(t, l, sb)), 1e-5);
}

}  // namespace
}  // namespace whitenlab
