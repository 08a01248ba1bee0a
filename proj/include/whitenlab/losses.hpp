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

// Losses over embedding batches (d x m, one column per example), each with
// its gradient and a tape operation where training needs one.

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"
#include "whitenlab/tape.hpp"
#include "whitenlab/whitening.hpp"

namespace whitenlab {

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
};

struct VicregParams {
  double alpha = 1.0;
  double lambda = 1.0;
};

struct ViewSet {
  std::vector<BatchEmbedding> views;

  std::size_t size() const { return views.size(); }

  void validate() const {
    if (views.size() < 2) throw Error(Errc::InvalidArgument, "a view set needs at least two views");
    for (const auto& v : views) {
      if (!v.data.same_shape(views.front().data)) throw Error(Errc::ShapeMismatch, "views differ in shape");
    }
  }
};

namespace detail {

inline void require_pair(const Matrix& a, const Matrix& b, const char* who) {
  if (!a.same_shape(b)) {
    throw Error(Errc::ShapeMismatch, std::string(who) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

inline std::vector<double> column_norms(const Matrix& z, const char* who) {
  std::vector<double> n(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) n[j] += z(i, j) * z(i, j);
  for (std::size_t j = 0; j < n.size(); ++j) {
    n[j] = std::sqrt(n[j]);
    if (n[j] < 1e-12) throw Error(Errc::ZeroVector, std::string(who) + ": column " + std::to_string(j) + " is zero");
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Normalized MSE: mean over columns of || z1/|z1| - z2/|z2| ||^2, in [0, 4].

inline LossValue mse_norm_loss(const Matrix& z1, const Matrix& z2) {
  detail::require_pair(z1, z2, "mse_norm_loss");
  const auto n1 = detail::column_norms(z1, "mse_norm_loss");
  const auto n2 = detail::column_norms(z2, "mse_norm_loss");
  double total = 0.0;
  for (std::size_t j = 0; j < z1.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < z1.rows(); ++i) {
      const double diff = z1(i, j) / n1[j] - z2(i, j) / n2[j];
      s += diff * diff;
    }
    total += s;
  }
  const double v = total / static_cast<double>(z1.cols());
  return {v, {{"alignment", v}}};
}

inline std::pair<Matrix, Matrix> mse_norm_loss_grad(const Matrix& z1, const Matrix& z2) {
  detail::require_pair(z1, z2, "mse_norm_loss");
  const auto n1 = detail::column_norms(z1, "mse_norm_loss");
  const auto n2 = detail::column_norms(z2, "mse_norm_loss");
  const double inv_m = 1.0 / static_cast<double>(z1.cols());
  Matrix g1(z1.rows(), z1.cols()), g2(z2.rows(), z2.cols());
  for (std::size_t j = 0; j < z1.cols(); ++j) {
    double uv = 0.0;
    for (std::size_t i = 0; i < z1.rows(); ++i) uv += (z1(i, j) / n1[j]) * (z2(i, j) / n2[j]);
    for (std::size_t i = 0; i < z1.rows(); ++i) {
      const double u = z1(i, j) / n1[j];
      const double v = z2(i, j) / n2[j];
      g1(i, j) = -2.0 * inv_m * (v - uv * u) / n1[j];
      g2(i, j) = -2.0 * inv_m * (u - uv * v) / n2[j];
    }
  }
  return {std::move(g1), std::move(g2)};
}

// ---------------------------------------------------------------------------
// Whitening MSE: (1/m) ||Zw1 - Zw2||_F^2 and its proxy split.

inline LossValue whitening_mse_loss(const Matrix& w1, const Matrix& w2) {
  detail::require_pair(w1, w2, "whitening_mse_loss");
  const double v = squared_norm(w1 - w2) / static_cast<double>(w1.cols());
  return {v, {{"alignment", v}}};
}

inline LossValue whitening_mse_loss(const WhitenOutput& w1, const WhitenOutput& w2) {
  return whitening_mse_loss(w1.whitened, w2.whitened);
}

// Gradient of whitening_mse_loss with respect to the two whitened matrices.
inline std::pair<Matrix, Matrix> whitening_mse_loss_grad(const Matrix& w1, const Matrix& w2) {
  detail::require_pair(w1, w2, "whitening_mse_loss");
  Matrix g1 = (w1 - w2) * (2.0 / static_cast<double>(w1.cols()));
  Matrix g2 = -g1;
  return {std::move(g1), std::move(g2)};
}

/// Sum of the two stop-gradient halves. Its value is twice the symmetric
/// loss; each half only sends gradient into its non-stopped argument.
inline LossValue proxy_whitening_loss(const WhitenOutput& w1, const WhitenOutput& w2) {
  const double half1 = whitening_mse_loss(w1, w2).value;
  const double half2 = whitening_mse_loss(w2, w1).value;
  return {half1 + half2, {{"online_1", half1}, {"online_2", half2}}};
}

// Gradient of the proxy loss: first half w.r.t. Zw1 only, second w.r.t. Zw2 only.
inline std::pair<Matrix, Matrix> proxy_whitening_loss_grad(const Matrix& w1, const Matrix& w2) {
  auto first = whitening_mse_loss_grad(w1, w2);
  auto second = whitening_mse_loss_grad(w2, w1);
  return {std::move(first.first), std::move(second.first)};
}

/// Online branch against a frozen whitened target: (1/m) ||phi(Z1) Z1 - target||^2.
inline LossValue asym_online_loss(const Matrix& z1, const Matrix& target, const WhitenConfig& cfg) {
  WhitenOutput w = whiten(z1, cfg);
  return whitening_mse_loss(w.whitened, target);
}

inline Matrix asym_online_loss_grad(const Matrix& z1, const Matrix& target, const WhitenConfig& cfg) {
  WhitenOutput w = whiten(z1, cfg);
  return whiten_vjp(w, whitening_mse_loss_grad(w.whitened, target).first, false);
}

// ---------------------------------------------------------------------------
// Soft whitening: (1/m)||Z1 - Z2||^2 + alpha * sum_i ||(1/m) Zi Zi^T - lambda I||^2,
// the covariance taken over row-centered Zi.

inline double vicreg_penalty(const Matrix& z, double lambda) {
  Matrix c = batch_cov(center_rows(z));
  for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) -= lambda;
  return squared_norm(c);
}

inline Matrix vicreg_penalty_grad(const Matrix& z, double lambda) {
  Matrix zc = center_rows(z);
  Matrix c = batch_cov(zc);
  for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) -= lambda;
  return center_rows(matmul(c, zc) * (4.0 / static_cast<double>(z.cols())));
}

inline LossValue vicreg_loss(const Matrix& z1, const Matrix& z2, const VicregParams& p) {
  detail::require_pair(z1, z2, "vicreg_loss");
  if (p.alpha < 0.0) throw Error(Errc::InvalidArgument, "vicreg alpha must be nonnegative");
  const double align = squared_norm(z1 - z2) / static_cast<double>(z1.cols());
  const double pen = p.alpha * (vicreg_penalty(z1, p.lambda) + vicreg_penalty(z2, p.lambda));
  return {align + pen, {{"alignment", align}, {"penalty", pen}}};
}

inline std::pair<Matrix, Matrix> vicreg_loss_grad(const Matrix& z1, const Matrix& z2, const VicregParams& p) {
  auto [g1, g2] = whitening_mse_loss_grad(z1, z2);
  g1 += vicreg_penalty_grad(z1, p.lambda) * p.alpha;
  g2 += vicreg_penalty_grad(z2, p.lambda) * p.alpha;
  return {std::move(g1), std::move(g2)};
}

// ---------------------------------------------------------------------------
// Covariance penalty along the channel dimension:
//   Zc = (I - 11^T/d) Z,  S = Zc^T Zc / (d-1),  C = (1/m) sum_{i != j} S_ij^2.

inline LossValue channel_cov_loss(const Matrix& z) {
  if (z.rows() < 2) throw Error(Errc::InvalidArgument, "channel_cov_loss needs d >= 2");
  Matrix zc = center_cols(z);
  Matrix s = matmul_tn(zc, zc) * (1.0 / static_cast<double>(z.rows() - 1));
  double c = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (i != j) c += s(i, j) * s(i, j);
  c /= static_cast<double>(z.cols());
  return {c, {{"penalty", c}}};
}

inline Matrix channel_cov_loss_grad(const Matrix& z) {
  const double dm1 = static_cast<double>(z.rows() - 1);
  Matrix zc = center_cols(z);
  Matrix s = matmul_tn(zc, zc) * (1.0 / dm1);
  for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) = 0.0;
  return center_cols(matmul(zc, s) * (4.0 / (static_cast<double>(z.cols()) * dm1)));
}

// ---------------------------------------------------------------------------
// Multi-view: every view whitened with the same configuration (and so the
// same channel partition), mean of the pairwise whitening MSE.

inline LossValue multiview_loss(const ViewSet& views, const WhitenConfig& cfg) {
  views.validate();
  std::vector<WhitenOutput> w;
  w.reserve(views.size());
  for (const auto& v : views.views) w.push_back(whiten(v.data, cfg));
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < w.size(); ++a)
    for (std::size_t b = a + 1; b < w.size(); ++b, ++pairs) total += whitening_mse_loss(w[a], w[b]).value;
  const double v = total / static_cast<double>(pairs);
  return {v, {{"alignment", v}}};
}

// ---------------------------------------------------------------------------
// Tape operations

namespace tape_ops {

struct MseNorm final : tape::Op {
  std::string_view name() const override { return "mse_norm_loss"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    return Matrix(1, 1, mse_norm_loss(*in[0], *in[1]).value);
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    auto [g1, g2] = mse_norm_loss_grad(*in[0], *in[1]);
    return {g1 * g.scalar(), g2 * g.scalar()};
  }
};

struct VicregPenalty final : tape::Op {
  explicit VicregPenalty(double lambda) : lambda(lambda) {}
  double lambda;
  std::string_view name() const override { return "vicreg_penalty"; }
  Matrix forward(std::span<const Matrix* const> in) override { return Matrix(1, 1, vicreg_penalty(*in[0], lambda)); }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    return {vicreg_penalty_grad(*in[0], lambda) * g.scalar()};
  }
};

struct ChannelCov final : tape::Op {
  std::string_view name() const override { return "channel_cov_loss"; }
  Matrix forward(std::span<const Matrix* const> in) override { return Matrix(1, 1, channel_cov_loss(*in[0]).value); }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    return {channel_cov_loss_grad(*in[0]) * g.scalar()};
  }
};

}  // namespace tape_ops

inline tape::Slot record_mse_norm(tape::Tape& t, tape::Slot a, tape::Slot b) {
  return t.record(std::make_unique<tape_ops::MseNorm>(), {a, b});
}

inline tape::Slot record_whitening_mse(tape::Tape& t, tape::Slot a, tape::Slot b) {
  const double m = static_cast<double>(t.value(a).cols());
  return tape::scaled_squared_norm(t, tape::sub(t, a, b), 1.0 / m);
}

inline tape::Slot record_vicreg_penalty(tape::Tape& t, tape::Slot z, double lambda) {
  return t.record(std::make_unique<tape_ops::VicregPenalty>(lambda), {z});
}

inline tape::Slot record_channel_cov(tape::Tape& t, tape::Slot z) {
  return t.record(std::make_unique<tape_ops::ChannelCov>(), {z});
}

}  // namespace whitenlab
