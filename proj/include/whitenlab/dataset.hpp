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

// Synthetic labeled point clouds and the view augmentations used for
// Siamese training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"
#include "whitenlab/rng.hpp"

namespace whitenlab {

struct DatasetSpec {
  std::size_t ambient_dim = 32;
  std::size_t classes = 10;
  std::size_t per_class = 200;
  double class_sep = 2.0;
  std::size_t intrinsic_dim = 4;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (ambient_dim == 0 || classes == 0) throw Error(Errc::InvalidArgument, "dataset needs ambient_dim, classes >= 1");
    if (intrinsic_dim > ambient_dim) throw Error(Errc::InvalidArgument, "intrinsic_dim exceeds ambient_dim");
    if (per_class < 2) throw Error(Errc::InvalidArgument, "per_class must be at least 2");
    if (class_sep < 0.0 || noise_sigma < 0.0) throw Error(Errc::InvalidArgument, "class_sep and noise_sigma must be >= 0");
  }
};

/// Points are columns of `x`.
struct Dataset {
  Matrix x;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

namespace detail {

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.classes = d.classes;
  out.x = Matrix(d.x.rows(), idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    for (std::size_t i = 0; i < d.x.rows(); ++i) out.x(i, k) = d.x(i, idx[k]);
    out.labels.push_back(d.labels[idx[k]]);
  }
  return out;
}

}  // namespace detail

/// Class means are random directions rescaled so that the closest pair sits
/// exactly class_sep apart. Each class owns a random ambient x intrinsic mixing
/// matrix with N(0, 1/ambient) entries.
inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, "dataset");
  const std::size_t a = spec.ambient_dim;
  Matrix means(a, spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double n = 0.0;
    while (n < 1e-8) {
      n = 0.0;
      for (std::size_t i = 0; i < a; ++i) {
        means(i, c) = rng.normal();
        n += means(i, c) * means(i, c);
      }
      n = std::sqrt(n);
    }
    for (std::size_t i = 0; i < a; ++i) means(i, c) /= n;
  }
  if (spec.classes > 1) {
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < spec.classes; ++p)
      for (std::size_t q = p + 1; q < spec.classes; ++q) {
        double s = 0.0;
        for (std::size_t i = 0; i < a; ++i) s += (means(i, p) - means(i, q)) * (means(i, p) - means(i, q));
        closest = std::min(closest, std::sqrt(s));
      }
    means *= spec.class_sep / closest;
  } else {
    means *= spec.class_sep;
  }

  Dataset d;
  d.classes = spec.classes;
  d.x = Matrix(a, spec.classes * spec.per_class);
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(a));
  std::size_t col = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<double> mixing(a * spec.intrinsic_dim);
    for (double& v : mixing) v = mix_scale * rng.normal();
    std::vector<double> f(spec.intrinsic_dim);
    for (std::size_t p = 0; p < spec.per_class; ++p, ++col) {
      for (double& v : f) v = rng.normal();
      for (std::size_t i = 0; i < a; ++i) {
        double v = means(i, c);
        for (std::size_t k = 0; k < spec.intrinsic_dim; ++k) v += mixing[i * spec.intrinsic_dim + k] * f[k];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        d.x(i, col) = v;
      }
      d.labels.push_back(c);
    }
  }
  return d;
}

/// Seeded shuffle, then the first `train_fraction` of the points train.
inline DatasetSplit split_dataset(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(Errc::InvalidArgument, "train_fraction must be in (0,1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, "split");
  rng.shuffle(idx.begin(), idx.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(d.size())));
  if (n_train == 0 || n_train == d.size()) throw Error(Errc::InvalidArgument, "split leaves an empty side");
  std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return {detail::subset(d, tr), detail::subset(d, te)};
}

struct AugmentConfig {
  double noise_sigma = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double mask_prob = 0.1;
  std::size_t views = 2;

  void validate() const {
    if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw Error(Errc::InvalidArgument, "scale range must be a positive interval");
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw Error(Errc::InvalidArgument, "mask_prob must be in [0,1)");
    if (noise_sigma < 0.0) throw Error(Errc::InvalidArgument, "augment noise_sigma must be >= 0");
    if (views < 2) throw Error(Errc::InvalidArgument, "need at least two views");
  }
};

/// One augmented copy of x: Gaussian noise, then a scalar scale, then a
/// coordinate mask, each with fresh draws.
inline std::vector<double> augment_one(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
  std::vector<double> v(x.begin(), x.end());
  if (cfg.noise_sigma > 0.0) {
    for (double& e : v) e += cfg.noise_sigma * rng.normal();
  }
  if (cfg.scale_lo != cfg.scale_hi) {
    const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    for (double& e : v) e *= s;
  } else if (cfg.scale_lo != 1.0) {
    for (double& e : v) e *= cfg.scale_lo;
  }
  if (cfg.mask_prob > 0.0) {
    for (double& e : v) {
      if (rng.uniform() < cfg.mask_prob) e = 0.0;
    }
  }
  return v;
}

inline std::vector<std::vector<double>> augment(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<std::vector<double>> views;
  views.reserve(cfg.views);
  for (std::size_t s = 0; s < cfg.views; ++s) views.push_back(augment_one(x, cfg, rng));
  return views;
}

/// Augments every column of a batch; returns one matrix per view. Column k of
/// every view derives from column k of `batch`.
inline std::vector<Matrix> augment_batch(const Matrix& batch, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<Matrix> views(cfg.views, Matrix(batch.rows(), batch.cols()));
  std::vector<double> col(batch.rows());
  for (std::size_t k = 0; k < batch.cols(); ++k) {
    for (std::size_t i = 0; i < batch.rows(); ++i) col[i] = batch(i, k);
    for (std::size_t s = 0; s < cfg.views; ++s) {
      std::vector<double> v = augment_one(col, cfg, rng);
      for (std::size_t i = 0; i < batch.rows(); ++i) views[s](i, k) = v[i];
    }
  }
  return views;
}

}  // namespace whitenlab
