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

// Encoder/projector MLPs recorded on a tape, and Adam.

#include <cmath>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"
#include "whitenlab/rng.hpp"
#include "whitenlab/tape.hpp"

namespace whitenlab {

struct ModelConfig {
  std::vector<std::size_t> encoder_widths{64, 64};  // the last entry is d_h
  bool encoder_standardize = false;
  std::vector<std::size_t> projector_hidden{128};
  std::size_t d_z = 16;
  double std_eps = 1e-5;

  void validate() const {
    if (encoder_widths.empty()) throw Error(Errc::InvalidArgument, "encoder needs at least one layer");
    for (auto w : encoder_widths)
      if (w == 0) throw Error(Errc::InvalidArgument, "encoder width must be positive");
    for (auto w : projector_hidden)
      if (w == 0) throw Error(Errc::InvalidArgument, "projector width must be positive");
    if (d_z == 0) throw Error(Errc::InvalidArgument, "d_z must be positive");
    if (std_eps < 0.0) throw Error(Errc::InvalidArgument, "std_eps must be >= 0");
  }
};

// y = act(std(W x + b)). Standardized layers carry no bias since the
// centering would cancel it.
struct DenseLayer {
  Matrix w;
  Matrix b;  // empty when standardize is set
  bool standardize = false;
  bool relu = true;
};

struct SiameseModel {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> projector;
  std::size_t input_dim = 0;
  double std_eps = 1e-5;

  std::size_t d_h() const { return encoder.back().w.rows(); }
  std::size_t d_z() const { return projector.back().w.rows(); }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> p;
    for (auto* stack : {&encoder, &projector}) {
      for (auto& l : *stack) {
        p.push_back(&l.w);
        if (!l.b.empty()) p.push_back(&l.b);
      }
    }
    return p;
  }

  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> p;
    for (auto* stack : {&encoder, &projector}) {
      for (const auto& l : *stack) {
        p.push_back(&l.w);
        if (!l.b.empty()) p.push_back(&l.b);
      }
    }
    return p;
  }

  bool all_finite() const {
    for (const Matrix* m : parameters())
      if (!m->all_finite()) return false;
    return true;
  }
};

namespace detail {

inline DenseLayer make_layer(std::size_t in, std::size_t out, bool standardize, bool relu, Rng& rng) {
  DenseLayer l;
  l.w = Matrix(out, in);
  // He initialization for ReLU layers, LeCun for the linear output.
  const double s = std::sqrt((relu ? 2.0 : 1.0) / static_cast<double>(in));
  for (double& v : l.w.data()) v = s * rng.normal();
  if (!standardize) l.b = Matrix(out, 1);
  l.standardize = standardize;
  l.relu = relu;
  return l;
}

}  // namespace detail

inline SiameseModel make_model(std::size_t input_dim, const ModelConfig& cfg, Rng& init) {
  cfg.validate();
  if (input_dim == 0) throw Error(Errc::InvalidArgument, "input_dim must be positive");
  SiameseModel m;
  m.input_dim = input_dim;
  m.std_eps = cfg.std_eps;
  std::size_t in = input_dim;
  for (std::size_t w : cfg.encoder_widths) {
    m.encoder.push_back(detail::make_layer(in, w, cfg.encoder_standardize, true, init));
    in = w;
  }
  for (std::size_t w : cfg.projector_hidden) {
    m.projector.push_back(detail::make_layer(in, w, true, true, init));
    in = w;
  }
  m.projector.push_back(detail::make_layer(in, cfg.d_z, false, false, init));
  return m;
}

/// Parameters bound as tape leaves; the same binding serves every view so
/// the gradients of all branches accumulate in one place.
struct BoundModel {
  const SiameseModel* model = nullptr;
  std::vector<tape::Slot> params;  // parallel to model->parameters()
};

inline BoundModel bind(tape::Tape& t, const SiameseModel& m, bool requires_grad = true) {
  BoundModel b{&m, {}};
  for (const Matrix* p : m.parameters()) b.params.push_back(t.leaf(*p, requires_grad));
  return b;
}

struct ForwardSlots {
  tape::Slot h;
  tape::Slot z;
};

inline ForwardSlots record_forward(tape::Tape& t, const BoundModel& b, tape::Slot x) {
  const SiameseModel& m = *b.model;
  std::size_t k = 0;
  auto layer = [&](const DenseLayer& l, tape::Slot in) {
    tape::Slot y = tape::matmul(t, b.params[k++], in);
    if (!l.b.empty()) y = tape::add_bias(t, y, b.params[k++]);
    if (l.standardize) y = tape::standardize_rows(t, y, m.std_eps);
    if (l.relu) y = tape::relu(t, y);
    return y;
  };
  tape::Slot h = x;
  for (const auto& l : m.encoder) h = layer(l, h);
  tape::Slot z = h;
  for (const auto& l : m.projector) z = layer(l, z);
  return {h, z};
}

struct ForwardPass {
  tape::Tape tape;
  BoundModel bound;
  tape::Slot x = 0;
  ForwardSlots out{};

  const Matrix& h() const { return tape.value(out.h); }
  const Matrix& z() const { return tape.value(out.z); }
};

/// Forward pass of one batch (columns of x) with the computation recorded.
inline ForwardPass forward(const SiameseModel& m, const Matrix& x, bool requires_grad = true) {
  if (x.rows() != m.input_dim) {
    throw Error(Errc::ShapeMismatch, "batch has " + std::to_string(x.rows()) + " rows, model expects " +
                                         std::to_string(m.input_dim));
  }
  ForwardPass f;
  f.bound = bind(f.tape, m, requires_grad);
  f.x = f.tape.leaf(x, false);
  f.out = record_forward(f.tape, f.bound, f.x);
  return f;
}

/// Encodings and embeddings without keeping the tape.
inline std::pair<Matrix, Matrix> infer(const SiameseModel& m, const Matrix& x) {
  ForwardPass f = forward(m, x, false);
  return {f.h(), f.z()};
}

// ---------------------------------------------------------------------------
// Adam with coupled L2 weight decay (decay folded into the gradient).

class Adam {
 public:
  Adam() = default;
  explicit Adam(const std::vector<const Matrix*>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr, double weight_decay) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw Error(Errc::ShapeMismatch, "Adam step: parameter count changed");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Matrix& p = *params[k];
      if (!grads[k].same_shape(p) || !m_[k].same_shape(p)) throw Error(Errc::ShapeMismatch, "Adam step: shape");
      auto pd = p.data();
      auto gd = grads[k].data();
      auto md = m_[k].data();
      auto vd = v_[k].data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const double g = gd[i] + weight_decay * pd[i];
        md[i] = beta1_ * md[i] + (1.0 - beta1_) * g;
        vd[i] = beta2_ * vd[i] + (1.0 - beta2_) * g * g;
        pd[i] -= lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + eps_);
      }
    }
  }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace whitenlab
