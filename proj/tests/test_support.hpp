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

// Random fixtures shared by the unit tests.

#include "whitenlab/linalg.hpp"
#include "whitenlab/matrix.hpp"
#include "whitenlab/rng.hpp"

namespace whitenlab::testing_support {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline Matrix random_symmetric(std::size_t n, Rng& rng) { return symmetrize(random_matrix(n, n, rng)); }

inline Matrix random_spd(std::size_t n, Rng& rng) {
  Matrix b = random_matrix(n, n, rng);
  return symmetrize(matmul_nt(b, b) + static_cast<double>(n) * Matrix::identity(n));
}

}  // namespace whitenlab::testing_support
