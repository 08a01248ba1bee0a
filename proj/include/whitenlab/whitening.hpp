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

// Batch whitening (ZCA, PCA, Cholesky), per-row standardization, channel
// whitening, group partitions and batch slicing, with exact backward passes.
//
// Layout convention: an embedding batch Z is d x m, one column per example.
// Batch methods whiten rows so that (1/m) Zw Zw^T = I; channel whitening
// whitens columns so that Zw^T Zw = I.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/linalg.hpp"
#include "whitenlab/matrix.hpp"
#include "whitenlab/rng.hpp"
#include "whitenlab/tape.hpp"

namespace whitenlab {

enum class WhitenMethod { ZCA, PCA, CD, BNStd, CW };

inline std::string_view method_name(WhitenMethod m) {
  switch (m) {
    case WhitenMethod::ZCA: return "zca";
    case WhitenMethod::PCA: return "pca";
    case WhitenMethod::CD: return "cd";
    case WhitenMethod::BNStd: return "bn";
    case WhitenMethod::CW: return "cw";
  }
  return "?";
}

inline WhitenMethod parse_method(std::string_view s) {
  if (s == "zca") return WhitenMethod::ZCA;
  if (s == "pca") return WhitenMethod::PCA;
  if (s == "cd") return WhitenMethod::CD;
  if (s == "bn" || s == "bnstd") return WhitenMethod::BNStd;
  if (s == "cw") return WhitenMethod::CW;
  throw Error(Errc::InvalidArgument, "unknown whitening method '" + std::string(s) + "'");
}

struct BatchEmbedding {
  Matrix data;  // d x m
  std::size_t view = 1;
};

// ---------------------------------------------------------------------------
// Group partitions

enum class PartitionMode { Fixed, Random };

struct GroupSpec {
  std::size_t d = 0;
  std::size_t g = 1;
  std::vector<std::size_t> assignment;  // permutation of 0..d-1, split into g contiguous blocks
  PartitionMode mode = PartitionMode::Fixed;
  std::uint64_t seed = 0;

  std::size_t group_size() const { return d / g; }

  std::vector<std::size_t> group(std::size_t i) const {
    const std::size_t k = group_size();
    return {assignment.begin() + static_cast<std::ptrdiff_t>(i * k),
            assignment.begin() + static_cast<std::ptrdiff_t>((i + 1) * k)};
  }
};

/// Random mode draws a fresh uniform permutation from `stream` on every call.
inline GroupSpec make_group_partition(std::size_t d, std::size_t g, PartitionMode mode, Rng& stream,
                                      std::uint64_t seed = 0) {
  if (d == 0 || g == 0) throw Error(Errc::InvalidArgument, "group partition needs d >= 1 and g >= 1");
  if (d % g != 0) {
    throw Error(Errc::NotDivisible, "d=" + std::to_string(d) + " is not divisible by g=" + std::to_string(g));
  }
  GroupSpec spec{d, g, std::vector<std::size_t>(d), mode, seed};
  std::iota(spec.assignment.begin(), spec.assignment.end(), 0);
  if (mode == PartitionMode::Random) stream.shuffle(spec.assignment.begin(), spec.assignment.end());
  return spec;
}

inline GroupSpec make_group_partition(std::size_t d, std::size_t g, PartitionMode mode, std::uint64_t seed = 0) {
  Rng stream(seed, "partition");
  return make_group_partition(d, g, mode, stream, seed);
}

inline bool is_valid(const GroupSpec& s) {
  if (s.g == 0 || s.d % s.g != 0 || s.assignment.size() != s.d) return false;
  std::vector<bool> seen(s.d, false);
  for (std::size_t c : s.assignment) {
    if (c >= s.d || seen[c]) return false;
    seen[c] = true;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Whitening outputs

struct WhitenCache {
  Matrix centered;                // Zc
  Matrix cov;                     // Sigma + eps I (batch) or Zc^T Zc + eps I (channel)
  std::optional<SymEig> eig;      // ZCA, PCA, CW
  std::optional<CholFactor> chol; // CD
  std::vector<double> inv_std;    // BNStd
};

// For a grouped output, `phi` of a batch method is the full d x d block
// matrix in original channel order (Zw = phi * Zc); for channel whitening it
// is the vertical stack of the g per-group m x m matrices. For a sliced
// output it is the horizontal concatenation of the per-slice phis.
struct WhitenOutput {
  WhitenMethod method = WhitenMethod::ZCA;
  Matrix whitened;
  Matrix phi;
  WhitenCache cache;

  std::vector<std::vector<std::size_t>> group_channels;
  std::vector<WhitenOutput> groups;

  std::size_t slice_size = 0;
  std::vector<WhitenOutput> slices;

  std::vector<std::string> warnings;
};

inline Matrix batch_cov(const Matrix& zc) {
  Matrix cov = matmul_nt(zc, zc);
  cov *= 1.0 / static_cast<double>(zc.cols());
  return cov;
}

namespace detail {

inline void add_ridge(Matrix& a, double eps) {
  if (eps < 0.0) throw Error(Errc::InvalidArgument, "shrinkage eps must be nonnegative");
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += eps;
}

// Smallest eigenvalue must clear this fraction of the largest.
inline bool spectrum_singular(const SymEig& e) {
  const double top = e.values.front();
  const double bottom = e.values.back();
  const double n = static_cast<double>(e.values.size());
  return !(top > 0.0) || !(bottom > top * n * 1e-14);
}

inline std::vector<double> inv_sqrt(const std::vector<double>& values) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = 1.0 / std::sqrt(values[i]);
  return out;
}

// Adjoint of phi = U diag(f(lambda)) U^T (sym = true) or diag(f) U^T
// (sym = false) with f = lambda^{-1/2}, pulled back to the factored matrix.
inline Matrix phi_backward(const Matrix& factored, const SymEig& eig, const Matrix& grad_phi, bool sym) {
  const std::size_t n = eig.values.size();
  const std::vector<double> f = inv_sqrt(eig.values);
  const Matrix& u = eig.vectors;
  std::vector<double> grad_lambda(n);
  Matrix grad_u;
  if (sym) {
    Matrix ptu = matmul(grad_phi + transpose(grad_phi), u);
    grad_u = scale_cols(ptu, f);
    Matrix utpu = matmul_tn(u, matmul(grad_phi, u));
    for (std::size_t k = 0; k < n; ++k) grad_lambda[k] = utpu(k, k) * (-0.5) * f[k] / eig.values[k];
  } else {
    Matrix pu = matmul(grad_phi, u);
    for (std::size_t k = 0; k < n; ++k) grad_lambda[k] = pu(k, k) * (-0.5) * f[k] / eig.values[k];
    grad_u = scale_cols(transpose(grad_phi), f);
  }
  return sym_eig_vjp(factored, eig, grad_lambda, grad_u);
}

inline void require_shape_for_batch(const Matrix& z) {
  if (z.empty()) throw Error(Errc::InvalidArgument, "empty embedding batch");
  if (!z.all_finite()) throw Error(Errc::InvalidArgument, "embedding batch has non-finite entries");
}

}  // namespace detail

/// Batch whitening of Z (d x m) with ZCA, PCA, CD or per-row standardization.
/// Rows are centered internally.
inline WhitenOutput batch_whiten(const Matrix& z, WhitenMethod method, double eps) {
  detail::require_shape_for_batch(z);
  if (method == WhitenMethod::CW) throw Error(Errc::InvalidArgument, "batch_whiten does not do channel whitening");
  if (z.cols() < 2) throw Error(Errc::BatchTooSmall, "batch whitening needs m >= 2, got m=" + std::to_string(z.cols()));

  WhitenOutput out;
  out.method = method;
  out.cache.centered = center_rows(z);
  const Matrix& zc = out.cache.centered;
  const std::size_t d = z.rows();

  if (method == WhitenMethod::BNStd) {
    std::vector<double> inv(d);
    const double m = static_cast<double>(z.cols());
    for (std::size_t i = 0; i < d; ++i) {
      double var = 0.0;
      for (double v : zc.row(i)) var += v * v;
      var = var / m + eps;
      if (!(var > 0.0)) throw Error(Errc::CovarianceSingular, "row " + std::to_string(i) + " has zero variance");
      inv[i] = 1.0 / std::sqrt(var);
    }
    out.phi = Matrix::diag(inv);
    out.whitened = scale_rows(zc, inv);
    out.cache.inv_std = std::move(inv);
    return out;
  }

  out.cache.cov = batch_cov(zc);
  detail::add_ridge(out.cache.cov, eps);

  if (method == WhitenMethod::CD) {
    try {
      out.cache.chol = cholesky(out.cache.cov);
    } catch (const Error& e) {
      if (e.code() != Errc::NotPositiveDefinite) throw;
      throw Error(Errc::CovarianceSingular, std::string("Cholesky whitening: ") + e.what());
    }
    const Matrix& l = out.cache.chol->lower;
    double max_diag = 0.0, min_pivot = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      max_diag = std::max(max_diag, out.cache.cov(i, i));
      min_pivot = std::min(min_pivot, l(i, i) * l(i, i));
    }
    if (!(min_pivot > max_diag * static_cast<double>(d) * 1e-14)) {
      throw Error(Errc::CovarianceSingular, "Cholesky whitening: covariance numerically singular");
    }
    out.phi = solve_lower(l, Matrix::identity(d));
    out.whitened = solve_lower(l, zc);
    return out;
  }

  out.cache.eig = sym_eig(out.cache.cov);
  const SymEig& e = *out.cache.eig;
  if (detail::spectrum_singular(e)) {
    throw Error(Errc::CovarianceSingular, "covariance eigenvalues not positive (min " + std::to_string(e.values.back()) +
                                              ", max " + std::to_string(e.values.front()) + ")");
  }
  const std::vector<double> f = detail::inv_sqrt(e.values);
  Matrix dut = scale_rows(transpose(e.vectors), f);  // Lambda^{-1/2} U^T
  out.phi = method == WhitenMethod::PCA ? dut : matmul(e.vectors, dut);
  out.whitened = matmul(out.phi, zc);
  return out;
}

/// Channel whitening: columns centered over channels, then Zw = Zc * phi with
/// phi = (Zc^T Zc + eps I)^{-1/2} in ZCA form, so Zw^T Zw = I.
inline WhitenOutput channel_whiten(const Matrix& z, double eps) {
  detail::require_shape_for_batch(z);
  if (z.rows() < 2) throw Error(Errc::InvalidArgument, "channel whitening needs d >= 2");
  WhitenOutput out;
  out.method = WhitenMethod::CW;
  out.cache.centered = center_cols(z);
  const Matrix& zc = out.cache.centered;
  out.cache.cov = matmul_tn(zc, zc);
  detail::add_ridge(out.cache.cov, eps);
  out.cache.eig = sym_eig(out.cache.cov);
  const SymEig& e = *out.cache.eig;
  if (detail::spectrum_singular(e)) {
    throw Error(Errc::GramSingular, "columns are linearly dependent (min Gram eigenvalue " +
                                        std::to_string(e.values.back()) + ")");
  }
  const std::vector<double> f = detail::inv_sqrt(e.values);
  out.phi = matmul_nt(scale_cols(e.vectors, f), e.vectors);
  out.whitened = matmul(zc, out.phi);
  if (z.rows() <= z.cols()) {
    out.warnings.push_back("channel whitening with d=" + std::to_string(z.rows()) + " <= m=" +
                           std::to_string(z.cols()) + "; columns cannot all be independent");
  }
  return out;
}

inline WhitenOutput whiten_single(const Matrix& z, WhitenMethod method, double eps) {
  return method == WhitenMethod::CW ? channel_whiten(z, eps) : batch_whiten(z, method, eps);
}

/// Whitens each channel group independently and reassembles the rows in the
/// original channel order.
inline WhitenOutput grouped_whiten(const Matrix& z, WhitenMethod method, const GroupSpec& spec, double eps) {
  if (spec.d != z.rows()) {
    throw Error(Errc::ShapeMismatch, "group spec is for d=" + std::to_string(spec.d) + ", batch has d=" +
                                         std::to_string(z.rows()));
  }
  if (!is_valid(spec)) throw Error(Errc::NotDivisible, "invalid group spec");
  if (spec.g == 1) return whiten_single(z, method, eps);

  WhitenOutput out;
  out.method = method;
  out.whitened = Matrix(z.rows(), z.cols());
  const std::size_t k = spec.group_size();
  const std::size_t m = z.cols();
  if (method == WhitenMethod::CW && k <= m) {
    out.warnings.push_back("group size d/g=" + std::to_string(k) + " does not exceed batch size m=" +
                           std::to_string(m));
  }
  std::vector<Matrix> cw_phis;
  if (method != WhitenMethod::CW) out.phi = Matrix(z.rows(), z.rows());
  for (std::size_t i = 0; i < spec.g; ++i) {
    std::vector<std::size_t> rows = spec.group(i);
    WhitenOutput part;
    try {
      part = whiten_single(select_rows(z, rows), method, eps);
    } catch (const Error& e) {
      throw Error(e.code(), "group " + std::to_string(i) + ": " + e.what());
    }
    for (std::size_t r = 0; r < k; ++r) {
      auto src = part.whitened.row(r);
      std::copy(src.begin(), src.end(), out.whitened.row(rows[r]).begin());
    }
    if (method == WhitenMethod::CW) {
      cw_phis.push_back(part.phi);
    } else {
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c) out.phi(rows[r], rows[c]) = part.phi(r, c);
    }
    part.warnings.clear();
    out.group_channels.push_back(std::move(rows));
    out.groups.push_back(std::move(part));
  }
  if (method == WhitenMethod::CW) out.phi = vcat(cw_phis);
  return out;
}

inline WhitenOutput cw_rgp(const Matrix& z, const GroupSpec& spec, double eps) {
  return grouped_whiten(z, WhitenMethod::CW, spec, eps);
}

/// Splits the columns into consecutive sub-batches of `sub_size`.
inline std::vector<Matrix> slice_batch(const Matrix& z, std::size_t sub_size) {
  if (sub_size == 0 || z.cols() % sub_size != 0) {
    throw Error(Errc::NotDivisible, "batch size " + std::to_string(z.cols()) + " is not divisible by slice size " +
                                        std::to_string(sub_size));
  }
  std::vector<Matrix> out;
  for (std::size_t first = 0; first < z.cols(); first += sub_size) out.push_back(select_cols(z, first, sub_size));
  return out;
}

struct WhitenConfig {
  WhitenMethod method = WhitenMethod::ZCA;
  std::optional<GroupSpec> groups;  // none: whole embedding
  std::size_t slice_size = 0;       // 0: no slicing
  double eps = 0.0;
};

/// Full pipeline: slice the batch (if requested), then group the channels
/// within each slice, then whiten.
inline WhitenOutput whiten(const Matrix& z, const WhitenConfig& cfg) {
  auto one = [&](const Matrix& part) {
    return cfg.groups ? grouped_whiten(part, cfg.method, *cfg.groups, cfg.eps) : whiten_single(part, cfg.method, cfg.eps);
  };
  if (cfg.slice_size == 0 || cfg.slice_size == z.cols()) return one(z);
  std::vector<Matrix> parts = slice_batch(z, cfg.slice_size);
  WhitenOutput out;
  out.method = cfg.method;
  out.slice_size = cfg.slice_size;
  std::vector<Matrix> whitened, phis;
  for (const Matrix& p : parts) {
    WhitenOutput s = one(p);
    whitened.push_back(s.whitened);
    phis.push_back(s.phi);
    out.warnings.insert(out.warnings.end(), s.warnings.begin(), s.warnings.end());
    out.slices.push_back(std::move(s));
  }
  out.whitened = hcat(whitened);
  out.phi = hcat(phis);
  return out;
}

/// Adjoint of Z -> whitened. With stop_grad_phi the whitening matrix is held
/// constant and only the centering and the product with phi are differentiated.
inline Matrix whiten_vjp(const WhitenOutput& out, const Matrix& grad_whitened, bool stop_grad_phi) {
  if (!grad_whitened.same_shape(out.whitened)) {
    throw Error(Errc::ShapeMismatch, "whiten_vjp: gradient is " + shape_str(grad_whitened) + ", output is " +
                                         shape_str(out.whitened));
  }
  if (!out.slices.empty()) {
    std::vector<Matrix> parts;
    for (std::size_t s = 0; s < out.slices.size(); ++s) {
      parts.push_back(
          whiten_vjp(out.slices[s], select_cols(grad_whitened, s * out.slice_size, out.slice_size), stop_grad_phi));
    }
    return hcat(parts);
  }
  if (!out.groups.empty()) {
    Matrix grad(grad_whitened.rows(), grad_whitened.cols());
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
      const auto& rows = out.group_channels[i];
      Matrix gi = whiten_vjp(out.groups[i], select_rows(grad_whitened, rows), stop_grad_phi);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = gi.row(r);
        std::copy(src.begin(), src.end(), grad.row(rows[r]).begin());
      }
    }
    return grad;
  }

  const Matrix& zc = out.cache.centered;
  const Matrix& g = grad_whitened;
  switch (out.method) {
    case WhitenMethod::BNStd: {
      const auto& inv = out.cache.inv_std;
      if (stop_grad_phi) return center_rows(scale_rows(g, inv));
      Matrix gi(g.rows(), g.cols());
      const double m = static_cast<double>(g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double mean_g = 0.0, mean_gy = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) {
          mean_g += g(i, j);
          mean_gy += g(i, j) * out.whitened(i, j);
        }
        mean_g /= m;
        mean_gy /= m;
        for (std::size_t j = 0; j < g.cols(); ++j) gi(i, j) = inv[i] * (g(i, j) - mean_g - out.whitened(i, j) * mean_gy);
      }
      return gi;
    }
    case WhitenMethod::ZCA:
    case WhitenMethod::PCA: {
      Matrix grad_zc = matmul_tn(out.phi, g);
      if (!stop_grad_phi) {
        Matrix grad_phi = matmul_nt(g, zc);
        Matrix grad_cov = detail::phi_backward(out.cache.cov, *out.cache.eig, grad_phi, out.method == WhitenMethod::ZCA);
        grad_zc += matmul(grad_cov, zc) * (2.0 / static_cast<double>(zc.cols()));
      }
      return center_rows(std::move(grad_zc));
    }
    case WhitenMethod::CD: {
      const Matrix& l = out.cache.chol->lower;
      Matrix grad_zc = solve_lower_transposed(l, g);  // L^{-T} G
      if (!stop_grad_phi) {
        Matrix grad_l = -matmul_nt(grad_zc, out.whitened);
        for (std::size_t i = 0; i < grad_l.rows(); ++i)
          for (std::size_t j = i + 1; j < grad_l.cols(); ++j) grad_l(i, j) = 0.0;
        Matrix grad_cov = cholesky_vjp(out.cache.cov, *out.cache.chol, grad_l);
        grad_zc += matmul(grad_cov, zc) * (2.0 / static_cast<double>(zc.cols()));
      }
      return center_rows(std::move(grad_zc));
    }
    case WhitenMethod::CW: {
      Matrix grad_zc = matmul_nt(g, out.phi);
      if (!stop_grad_phi) {
        Matrix grad_phi = matmul_tn(zc, g);
        Matrix grad_gram = detail::phi_backward(out.cache.cov, *out.cache.eig, grad_phi, true);
        grad_zc += matmul(zc, grad_gram) * 2.0;
      }
      return center_cols(std::move(grad_zc));
    }
  }
  throw Error(Errc::InvalidArgument, "whiten_vjp: unknown method");
}

// ---------------------------------------------------------------------------
// Tape integration

namespace tape_ops {

struct Whiten final : tape::Op {
  Whiten(WhitenConfig cfg, bool stop_grad_phi) : cfg(std::move(cfg)), stop_grad_phi(stop_grad_phi) {}
  WhitenConfig cfg;
  bool stop_grad_phi;
  WhitenOutput last;
  std::string_view name() const override { return "whiten"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    last = whiten(*in[0], cfg);
    return last.whitened;
  }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {whiten_vjp(last, g, stop_grad_phi)};
  }
};

}  // namespace tape_ops

inline tape::Slot record_whiten(tape::Tape& t, tape::Slot z, const WhitenConfig& cfg, bool stop_grad_phi = false) {
  return t.record(std::make_unique<tape_ops::Whiten>(cfg, stop_grad_phi), {z});
}

}  // namespace whitenlab
