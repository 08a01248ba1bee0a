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

// Collapse indicators: numerical rank and stable rank, mean negative-pair
// cosine similarity, and the epoch-wise variance probe on a fixed batch.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/linalg.hpp"
#include "whitenlab/matrix.hpp"

namespace whitenlab {

struct SpectralReport {
  std::size_t rank = 0;
  double stable_rank = 0.0;
  double normalized_rank = 0.0;
  double normalized_stable_rank = 0.0;
  std::vector<double> singular_values;
  double threshold = 0.0;
};

inline constexpr double kDefaultRankPolicy = 1e6;

/// Singular values above tau = s1 * max(d, m) * machine_eps * policy count
/// toward the rank; the stable rank sums the same singular values over s1.
/// Normalized variants divide by d = rows.
inline SpectralReport spectral_report(const Matrix& a, double rank_policy = kDefaultRankPolicy) {
  SpectralReport r;
  r.singular_values = svd(a).singular;
  const double top = r.singular_values.empty() ? 0.0 : r.singular_values.front();
  if (!(top > 0.0)) return r;
  const double big = static_cast<double>(std::max(a.rows(), a.cols()));
  r.threshold = top * big * std::numeric_limits<double>::epsilon() * rank_policy;
  double sum = 0.0;
  for (double s : r.singular_values) {
    if (s > r.threshold) {
      ++r.rank;
      sum += s;
    }
  }
  r.stable_rank = sum / top;
  const double d = static_cast<double>(a.rows());
  r.normalized_rank = static_cast<double>(r.rank) / d;
  r.normalized_stable_rank = r.stable_rank / d;
  return r;
}

/// Mean cosine similarity over all distinct column pairs.
inline double neg_cosine(const Matrix& z) {
  if (z.cols() < 2) throw Error(Errc::InvalidArgument, "neg_cosine needs at least two columns");
  std::vector<double> inv(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) inv[j] += z(i, j) * z(i, j);
  for (std::size_t j = 0; j < inv.size(); ++j) {
    const double n = std::sqrt(inv[j]);
    if (n < 1e-12) throw Error(Errc::ZeroVector, "neg_cosine: column " + std::to_string(j) + " is zero");
    inv[j] = 1.0 / n;
  }
  Matrix u = scale_cols(z, inv);
  Matrix gram = matmul_tn(u, u);
  double sum = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = i + 1; j < gram.cols(); ++j) sum += gram(i, j);
  const double pairs = 0.5 * static_cast<double>(z.cols()) * static_cast<double>(z.cols() - 1);
  return sum / pairs;
}

// ---------------------------------------------------------------------------
// Variance probe

struct LogHistogram {
  static constexpr std::size_t kBins = 50;
  static constexpr double kLowExp = -12.0;
  static constexpr double kHighExp = 2.0;

  std::vector<double> edges;  // kBins + 1 log-spaced edges
  std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);
  std::size_t underflow = 0;
  std::size_t overflow = 0;

  LogHistogram() {
    edges.resize(kBins + 1);
    for (std::size_t k = 0; k <= kBins; ++k) {
      edges[k] = std::pow(10.0, kLowExp + (kHighExp - kLowExp) * static_cast<double>(k) / kBins);
    }
  }

  void add(double v) {
    if (!(v >= edges.front())) {
      ++underflow;
    } else if (v > edges.back()) {
      ++overflow;
    } else {
      auto pos = static_cast<std::size_t>((std::log10(v) - kLowExp) / (kHighExp - kLowExp) * kBins);
      counts[std::min(pos, kBins - 1)]++;
    }
  }
};

struct ProbeSummary {
  std::size_t snapshots = 0;
  std::size_t first_epoch = 0;
  std::size_t last_epoch = 0;
  double mean_z_var = 0.0;
  double max_z_var = 0.0;
  double mean_phi_var = 0.0;
  double max_phi_var = 0.0;
  LogHistogram phi_hist;
};

class VarianceProbe {
 public:
  explicit VarianceProbe(Matrix fixed_batch) : batch_(std::move(fixed_batch)) {}

  const Matrix& fixed_batch() const { return batch_; }
  std::size_t size() const { return snaps_.size(); }

  void record(std::size_t epoch, Matrix whitened, Matrix phi) {
    if (!whitened.same_shape(batch_)) {
      throw Error(Errc::ShapeMismatch, "probe snapshot is " + shape_str(whitened) + ", fixed batch is " + shape_str(batch_));
    }
    if (!snaps_.empty() && !phi.same_shape(snaps_.begin()->second.phi)) {
      throw Error(Errc::ShapeMismatch, "whitening matrix changed shape between snapshots");
    }
    if (snaps_.count(epoch)) throw Error(Errc::DuplicateEpoch, "epoch " + std::to_string(epoch) + " already recorded");
    snaps_.emplace(epoch, Snapshot{std::move(whitened), std::move(phi)});
  }

  /// Population variance over the snapshots with epoch in [first, last].
  ProbeSummary summarize(std::optional<std::pair<std::size_t, std::size_t>> window = std::nullopt) const {
    std::vector<const Snapshot*> picked;
    std::vector<std::size_t> epochs;
    for (const auto& [epoch, snap] : snaps_) {
      if (!window || (epoch >= window->first && epoch <= window->second)) {
        picked.push_back(&snap);
        epochs.push_back(epoch);
      }
    }
    if (picked.size() < 2) {
      throw Error(Errc::TooFewSnapshots, "variance needs at least 2 snapshots, have " + std::to_string(picked.size()));
    }
    ProbeSummary s;
    s.snapshots = picked.size();
    s.first_epoch = epochs.front();
    s.last_epoch = epochs.back();
    const Matrix zv = elementwise_variance(picked, &Snapshot::whitened);
    const Matrix pv = elementwise_variance(picked, &Snapshot::phi);
    s.mean_z_var = mean(zv);
    s.max_z_var = max_abs(zv);
    s.mean_phi_var = mean(pv);
    s.max_phi_var = max_abs(pv);
    for (double v : pv.data()) s.phi_hist.add(v);
    return s;
  }

  Matrix whitened_variance() const { return elementwise_variance(all(), &Snapshot::whitened); }
  Matrix phi_variance() const { return elementwise_variance(all(), &Snapshot::phi); }

 private:
  struct Snapshot {
    Matrix whitened;
    Matrix phi;
  };

  std::vector<const Snapshot*> all() const {
    std::vector<const Snapshot*> v;
    for (const auto& kv : snaps_) v.push_back(&kv.second);
    if (v.size() < 2) throw Error(Errc::TooFewSnapshots, "variance needs at least 2 snapshots");
    return v;
  }

  static double mean(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s / static_cast<double>(a.size());
  }

  static Matrix elementwise_variance(const std::vector<const Snapshot*>& picked, Matrix Snapshot::*field) {
    const Matrix& first = picked.front()->*field;
    Matrix mu(first.rows(), first.cols());
    for (const Snapshot* s : picked) mu += s->*field;
    mu *= 1.0 / static_cast<double>(picked.size());
    Matrix var(first.rows(), first.cols());
    for (const Snapshot* s : picked) {
      Matrix dev = s->*field - mu;
      var += hadamard(dev, dev);
    }
    var *= 1.0 / static_cast<double>(picked.size());
    return var;
  }

  Matrix batch_;
  std::map<std::size_t, Snapshot> snaps_;
};

}  // namespace whitenlab
