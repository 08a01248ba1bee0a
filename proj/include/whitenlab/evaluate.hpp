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

// Frozen-feature evaluation: k-nearest-neighbour vote and a multinomial
// logistic-regression probe. Features are columns.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"

namespace whitenlab {

namespace detail {

inline void require_labels(const Matrix& f, const std::vector<std::size_t>& y, std::size_t classes) {
  if (f.cols() != y.size()) throw Error(Errc::ShapeMismatch, "feature/label count mismatch");
  for (auto c : y)
    if (c >= classes) throw Error(Errc::InvalidArgument, "label out of range");
}

}  // namespace detail

/// Euclidean k-NN with majority vote; a tie between classes goes to the
/// tied class with the nearest neighbour.
inline double knn_accuracy(const Matrix& train, const std::vector<std::size_t>& train_y, const Matrix& test,
                           const std::vector<std::size_t>& test_y, std::size_t classes, std::size_t k = 5) {
  detail::require_labels(train, train_y, classes);
  detail::require_labels(test, test_y, classes);
  if (train.rows() != test.rows()) throw Error(Errc::ShapeMismatch, "train/test feature dims differ");
  k = std::min(k, train.cols());
  const std::size_t n = train.cols();
  std::vector<double> train_sq(n, 0.0);
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) train_sq[j] += train(i, j) * train(i, j);
  Matrix cross = matmul_tn(test, train);  // test x train inner products

  std::size_t correct = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> dist(n);
  for (std::size_t q = 0; q < test.cols(); ++q) {
    double qsq = 0.0;
    for (std::size_t i = 0; i < test.rows(); ++i) qsq += test(i, q) * test(i, q);
    for (std::size_t j = 0; j < n; ++j) dist[j] = qsq + train_sq[j] - 2.0 * cross(q, j);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    std::vector<std::size_t> votes(classes, 0);
    for (std::size_t r = 0; r < k; ++r) votes[train_y[order[r]]]++;
    const std::size_t best = *std::max_element(votes.begin(), votes.end());
    std::size_t pick = classes;
    for (std::size_t r = 0; r < k && pick == classes; ++r) {
      if (votes[train_y[order[r]]] == best) pick = train_y[order[r]];
    }
    if (pick == test_y[q]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.cols());
}

struct LinearProbeConfig {
  std::size_t max_iters = 2000;
  double tolerance = 1e-6;  // on the gradient norm
  double l2 = 1e-4;
};

struct LinearProbeResult {
  double accuracy = 0.0;
  std::size_t iterations = 0;
  double final_loss = 0.0;
  bool converged = false;
};

/// Multinomial logistic regression on standardized features, trained by
/// full-batch gradient descent with a backtracking (Armijo) line search.
inline LinearProbeResult linear_probe(const Matrix& train, const std::vector<std::size_t>& train_y, const Matrix& test,
                                      const std::vector<std::size_t>& test_y, std::size_t classes,
                                      const LinearProbeConfig& cfg = {}) {
  detail::require_labels(train, train_y, classes);
  detail::require_labels(test, test_y, classes);
  const std::size_t d = train.rows(), n = train.cols();
  if (test.rows() != d) throw Error(Errc::ShapeMismatch, "train/test feature dims differ");

  // Standardize with training statistics; constant features become 0.
  std::vector<double> mu(d, 0.0), inv(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) mu[i] += train(i, j);
    mu[i] /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (train(i, j) - mu[i]) * (train(i, j) - mu[i]);
    var /= static_cast<double>(n);
    inv[i] = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
  }
  auto standardize = [&](const Matrix& f) {
    Matrix out(d + 1, f.cols());  // last row is the bias feature
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < f.cols(); ++j) out(i, j) = (f(i, j) - mu[i]) * inv[i];
    for (std::size_t j = 0; j < f.cols(); ++j) out(d, j) = 1.0;
    return out;
  };
  const Matrix xs = standardize(train);
  const double inv_n = 1.0 / static_cast<double>(n);

  // Loss and gradient of mean cross-entropy + (l2/2)|W|^2 (bias excluded).
  auto evaluate = [&](const Matrix& w, Matrix* grad) {
    Matrix logits = matmul(w, xs);  // classes x n
    double loss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) top = std::max(top, logits(c, j));
      double s = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        logits(c, j) = std::exp(logits(c, j) - top);
        s += logits(c, j);
      }
      for (std::size_t c = 0; c < classes; ++c) logits(c, j) /= s;
      loss -= std::log(std::max(logits(train_y[j], j), 1e-300));
      logits(train_y[j], j) -= 1.0;
    }
    loss *= inv_n;
    double reg = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0; i < d; ++i) reg += w(c, i) * w(c, i);
    loss += 0.5 * cfg.l2 * reg;
    if (grad) {
      *grad = matmul_nt(logits, xs) * inv_n;
      for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < d; ++i) (*grad)(c, i) += cfg.l2 * w(c, i);
    }
    return loss;
  };

  Matrix w(classes, d + 1), g;
  double loss = evaluate(w, &g);
  double step = 1.0;
  LinearProbeResult r;
  for (r.iterations = 0; r.iterations < cfg.max_iters; ++r.iterations) {
    const double gg = squared_norm(g);
    if (std::sqrt(gg) < cfg.tolerance) {
      r.converged = true;
      break;
    }
    step *= 2.0;
    Matrix trial, tg;
    double tl = 0.0;
    for (int back = 0; back < 60; ++back) {
      trial = w - g * step;
      tl = evaluate(trial, nullptr);
      if (tl <= loss - 0.5 * step * gg) break;
      step *= 0.5;
    }
    w = std::move(trial);
    loss = evaluate(w, &g);
  }
  r.final_loss = loss;

  const Matrix ts = standardize(test);
  Matrix logits = matmul(w, ts);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < ts.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (logits(c, j) > logits(best, j)) best = c;
    if (best == test_y[j]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ts.cols());
  return r;
}

}  // namespace whitenlab
