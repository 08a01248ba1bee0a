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

// Finite-difference checks of the whitening adjoints and loss gradients,
// shared by the command line tool and the acceptance runner.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "whitenlab/losses.hpp"
#include "whitenlab/rng.hpp"
#include "whitenlab/tape.hpp"
#include "whitenlab/whitening.hpp"

namespace whitenlab {

struct GradCheck {
  std::string name;
  double rel_error = 0.0;
};

/// Central differences with step h = rel_step * (1 + |x|).
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double rel_step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x.data()[k];
    const double h = rel_step * (1.0 + std::abs(x0));
    probe.data()[k] = x0 + h;
    const double fp = f(probe);
    probe.data()[k] = x0 - h;
    const double fm = f(probe);
    probe.data()[k] = x0;
    g.data()[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace detail {

inline Matrix gaussian_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix a(r, c);
  for (double& v : a.data()) v = rng.normal();
  return a;
}

// Z -> Phi0 * center(Z) with Phi0 held at its value for z0.
inline Matrix frozen_map(const WhitenOutput& w0, const Matrix& z, WhitenMethod m) {
  return m == WhitenMethod::CW ? matmul(center_cols(z), w0.phi) : matmul(w0.phi, center_rows(z));
}

}  // namespace detail

/// Full and frozen-Phi adjoints of one whitening transform against the probe
/// f(Z) = 0.5 * ||whiten(Z) - C||^2. Frozen checks run only without groups.
inline std::vector<GradCheck> check_whitening_gradients(WhitenMethod method, std::size_t d, std::size_t m, Rng& rng,
                                                        std::size_t groups = 1, double eps = 0.0) {
  std::optional<GroupSpec> spec;
  if (groups > 1) spec = make_group_partition(d, groups, PartitionMode::Random, rng);
  const WhitenConfig cfg{method, spec, 0, eps};
  const Matrix z = detail::gaussian_matrix(d, m, rng);
  const Matrix c = detail::gaussian_matrix(d, m, rng);
  const std::string tag = std::string(method_name(method)) + (groups > 1 ? "/g" + std::to_string(groups) : "");

  std::vector<GradCheck> out;
  const WhitenOutput w = whiten(z, cfg);
  const Matrix analytic = whiten_vjp(w, w.whitened - c, false);
  const Matrix numeric = numeric_gradient(
      [&](const Matrix& x) { return 0.5 * squared_norm(whiten(x, cfg).whitened - c); }, z);
  out.push_back({tag + "/full", tape::relative_error(analytic, numeric)});

  if (groups <= 1) {
    const Matrix frozen = whiten_vjp(w, w.whitened - c, true);
    const Matrix ref = numeric_gradient(
        [&](const Matrix& x) { return 0.5 * squared_norm(detail::frozen_map(w, x, method) - c); }, z);
    out.push_back({tag + "/frozen", tape::relative_error(frozen, ref)});
  }
  return out;
}

/// Gradients of every loss with respect to each argument.
inline std::vector<GradCheck> check_loss_gradients(std::size_t d, std::size_t m, Rng& rng) {
  const Matrix a = detail::gaussian_matrix(d, m, rng);
  const Matrix b = detail::gaussian_matrix(d, m, rng);
  std::vector<GradCheck> out;
  auto check = [&](const char* name, const Matrix& analytic, const std::function<double(const Matrix&)>& f,
                   const Matrix& at) {
    out.push_back({name, tape::relative_error(analytic, numeric_gradient(f, at))});
  };

  auto mn = mse_norm_loss_grad(a, b);
  check("mse_norm/z1", mn.first, [&](const Matrix& x) { return mse_norm_loss(x, b).value; }, a);
  check("mse_norm/z2", mn.second, [&](const Matrix& x) { return mse_norm_loss(a, x).value; }, b);

  auto wm = whitening_mse_loss_grad(a, b);
  check("whitening_mse/z1", wm.first, [&](const Matrix& x) { return whitening_mse_loss(x, b).value; }, a);
  check("whitening_mse/z2", wm.second, [&](const Matrix& x) { return whitening_mse_loss(a, x).value; }, b);

  // Only the online half of the proxy reaches each argument.
  auto px = proxy_whitening_loss_grad(a, b);
  check("proxy/z1", px.first, [&](const Matrix& x) { return whitening_mse_loss(x, b).value; }, a);
  check("proxy/z2", px.second, [&](const Matrix& x) { return whitening_mse_loss(x, a).value; }, b);

  const VicregParams p{0.5, 1.0};
  auto vr = vicreg_loss_grad(a, b, p);
  check("vicreg/z1", vr.first, [&](const Matrix& x) { return vicreg_loss(x, b, p).value; }, a);
  check("vicreg/z2", vr.second, [&](const Matrix& x) { return vicreg_loss(a, x, p).value; }, b);

  check("channel_cov", channel_cov_loss_grad(a), [&](const Matrix& x) { return channel_cov_loss(x).value; }, a);

  if (m > d) {
    for (WhitenMethod w : {WhitenMethod::ZCA, WhitenMethod::CD}) {
      const WhitenConfig cfg{w, std::nullopt, 0, 0.0};
      const Matrix target = whiten(b, cfg).whitened;
      check(w == WhitenMethod::ZCA ? "asym_online/zca" : "asym_online/cd", asym_online_loss_grad(a, target, cfg),
            [&](const Matrix& x) { return asym_online_loss(x, target, cfg).value; }, a);
    }
  }
  return out;
}

}  // namespace whitenlab
