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

// A reverse-mode record of matrix operations. Values live in numbered
// slots; leaves are set by the caller, every other slot is produced by
// exactly one recorded operation. The record can be replayed forward after
// changing leaf values, which is what the finite-difference checks use.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "whitenlab/error.hpp"
#include "whitenlab/matrix.hpp"

namespace whitenlab::tape {

using Slot = std::size_t;

class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual Matrix forward(std::span<const Matrix* const> in) = 0;
  // One entry per input; an empty Matrix means "no gradient flows".
  virtual std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix& out,
                                       const Matrix& grad_out) = 0;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Matrix> g) : g_(std::move(g)) {}
  const Matrix& operator[](Slot s) const { return g_.at(s); }
  std::size_t size() const { return g_.size(); }

 private:
  std::vector<Matrix> g_;
};

class Tape {
 public:
  Slot leaf(Matrix value, bool requires_grad = true) {
    if (value.empty()) throw Error(Errc::InvalidArgument, "tape leaf must hold a value");
    values_.push_back(std::move(value));
    producer_.push_back(kNoProducer);
    needs_grad_.push_back(requires_grad);
    return values_.size() - 1;
  }

  Slot record(std::unique_ptr<Op> op, std::vector<Slot> inputs) {
    bool needs = false;
    for (Slot s : inputs) {
      check(s);
      needs = needs || needs_grad_[s];
    }
    Entry e{std::move(op), std::move(inputs), values_.size()};
    Matrix out = run_forward(e);
    values_.push_back(std::move(out));
    producer_.push_back(entries_.size());
    needs_grad_.push_back(needs);
    entries_.push_back(std::move(e));
    return values_.size() - 1;
  }

  const Matrix& value(Slot s) const {
    check(s);
    return values_[s];
  }

  bool is_leaf(Slot s) const {
    check(s);
    return producer_[s] == kNoProducer;
  }

  void set_leaf(Slot s, Matrix v) {
    if (!is_leaf(s)) throw Error(Errc::InvalidArgument, "set_leaf on a computed slot");
    if (!v.same_shape(values_[s])) throw Error(Errc::ShapeMismatch, "set_leaf shape change");
    values_[s] = std::move(v);
  }

  /// Recomputes every recorded operation in record order from the current
  /// leaf values.
  void replay() {
    for (auto& e : entries_) values_[e.output] = run_forward(e);
  }

  std::size_t num_slots() const { return values_.size(); }
  std::size_t num_ops() const { return entries_.size(); }
  std::string_view op_name(std::size_t k) const { return entries_.at(k).op->name(); }

  /// Gradient of the scalar in `seed` with respect to every slot. Leaves that
  /// the seed does not depend on get a zero matrix.
  Gradients backward(Slot seed, std::vector<std::size_t>* visit_order = nullptr) const {
    check(seed);
    if (values_[seed].rows() != 1 || values_[seed].cols() != 1) {
      throw Error(Errc::SeedNotScalar, "seed slot holds a " + shape_str(values_[seed]) + " value");
    }
    std::vector<Matrix> grads(values_.size());
    grads[seed] = Matrix(1, 1, 1.0);
    for (std::size_t k = entries_.size(); k-- > 0;) {
      const Entry& e = entries_[k];
      if (visit_order) visit_order->push_back(k);
      if (grads[e.output].empty() || !needs_grad_[e.output]) continue;
      std::vector<const Matrix*> in;
      in.reserve(e.inputs.size());
      for (Slot s : e.inputs) in.push_back(&values_[s]);
      std::vector<Matrix> gin = e.op->backward(in, values_[e.output], grads[e.output]);
      if (gin.size() != e.inputs.size()) {
        throw Error(Errc::InvalidArgument, std::string(e.op->name()) + " returned wrong gradient count");
      }
      for (std::size_t i = 0; i < gin.size(); ++i) {
        const Slot s = e.inputs[i];
        if (gin[i].empty() || !needs_grad_[s]) continue;
        if (!gin[i].same_shape(values_[s])) {
          throw Error(Errc::ShapeMismatch, std::string(e.op->name()) + " gradient shape mismatch");
        }
        if (grads[s].empty()) {
          grads[s] = std::move(gin[i]);
        } else {
          grads[s] += gin[i];
        }
      }
    }
    for (Slot s = 0; s < values_.size(); ++s) {
      if (grads[s].empty()) grads[s] = Matrix(values_[s].rows(), values_[s].cols());
    }
    return Gradients(std::move(grads));
  }

 private:
  static constexpr std::size_t kNoProducer = static_cast<std::size_t>(-1);

  struct Entry {
    std::unique_ptr<Op> op;
    std::vector<Slot> inputs;
    Slot output;
  };

  Matrix run_forward(Entry& e) {
    std::vector<const Matrix*> in;
    in.reserve(e.inputs.size());
    for (Slot s : e.inputs) in.push_back(&values_[s]);
    return e.op->forward(in);
  }

  void check(Slot s) const {
    if (s >= values_.size()) throw Error(Errc::InvalidArgument, "unknown tape slot " + std::to_string(s));
  }

  std::vector<Matrix> values_;
  std::vector<std::size_t> producer_;
  std::vector<bool> needs_grad_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Primitive operations.

namespace ops {

struct MatMul final : Op {
  std::string_view name() const override { return "matmul"; }
  Matrix forward(std::span<const Matrix* const> in) override { return matmul(*in[0], *in[1]); }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    return {matmul_nt(g, *in[1]), matmul_tn(*in[0], g)};
  }
};

struct Add final : Op {
  std::string_view name() const override { return "add"; }
  Matrix forward(std::span<const Matrix* const> in) override { return *in[0] + *in[1]; }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {g, g};
  }
};

struct Sub final : Op {
  std::string_view name() const override { return "sub"; }
  Matrix forward(std::span<const Matrix* const> in) override { return *in[0] - *in[1]; }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {g, -g};
  }
};

struct Scale final : Op {
  explicit Scale(double c) : c(c) {}
  double c;
  std::string_view name() const override { return "scale"; }
  Matrix forward(std::span<const Matrix* const> in) override { return *in[0] * c; }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {g * c};
  }
};

struct Transpose final : Op {
  std::string_view name() const override { return "transpose"; }
  Matrix forward(std::span<const Matrix* const> in) override { return transpose(*in[0]); }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {transpose(g)};
  }
};

// x (d x m) + b (d x 1) broadcast over columns.
struct AddBias final : Op {
  std::string_view name() const override { return "add_bias"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    const Matrix& b = *in[1];
    if (b.rows() != x.rows() || b.cols() != 1) throw Error(Errc::ShapeMismatch, "add_bias");
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (double& v : out.row(i)) v += b(i, 0);
    return out;
  }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    Matrix gb(g.rows(), 1);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (double v : g.row(i)) gb(i, 0) += v;
    return {g, gb};
  }
};

struct Relu final : Op {
  std::string_view name() const override { return "relu"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    Matrix out = *in[0];
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
  }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    Matrix gi = g;
    auto x = in[0]->data();
    auto d = gi.data();
    for (std::size_t k = 0; k < d.size(); ++k)
      if (!(x[k] > 0.0)) d[k] = 0.0;
    return {gi};
  }
};

struct CenterRows final : Op {
  std::string_view name() const override { return "center_rows"; }
  Matrix forward(std::span<const Matrix* const> in) override { return center_rows(*in[0]); }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {center_rows(g)};
  }
};

struct CenterCols final : Op {
  std::string_view name() const override { return "center_cols"; }
  Matrix forward(std::span<const Matrix* const> in) override { return center_cols(*in[0]); }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g) override {
    return {center_cols(g)};
  }
};

// Per-row standardization over the batch (columns) with mini-batch statistics.
struct StandardizeRows final : Op {
  explicit StandardizeRows(double eps) : eps(eps) {}
  double eps;
  std::vector<double> inv_std;
  std::string_view name() const override { return "standardize_rows"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    Matrix out = center_rows(*in[0]);
    inv_std.assign(out.rows(), 0.0);
    const double m = static_cast<double>(out.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double var = 0.0;
      for (double v : out.row(i)) var += v * v;
      var = var / m + eps;
      if (!(var > 0.0)) throw Error(Errc::CovarianceSingular, "standardize_rows: zero variance row " + std::to_string(i));
      inv_std[i] = 1.0 / std::sqrt(var);
      for (double& v : out.row(i)) v *= inv_std[i];
    }
    return out;
  }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix& out, const Matrix& g) override {
    Matrix gi(g.rows(), g.cols());
    const double m = static_cast<double>(g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      auto yr = out.row(i);
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t j = 0; j < gr.size(); ++j) {
        mean_g += gr[j];
        mean_gy += gr[j] * yr[j];
      }
      mean_g /= m;
      mean_gy /= m;
      for (std::size_t j = 0; j < gr.size(); ++j) gi(i, j) = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
    }
    return {gi};
  }
};

// Each column scaled to unit L2 norm.
struct NormalizeCols final : Op {
  std::vector<double> norms;
  std::string_view name() const override { return "normalize_cols"; }
  Matrix forward(std::span<const Matrix* const> in) override {
    const Matrix& x = *in[0];
    norms.assign(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) norms[j] += x(i, j) * x(i, j);
    std::vector<double> inv(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
      norms[j] = std::sqrt(norms[j]);
      if (norms[j] < 1e-12) throw Error(Errc::ZeroVector, "normalize_cols: column " + std::to_string(j));
      inv[j] = 1.0 / norms[j];
    }
    return scale_cols(x, inv);
  }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix& out, const Matrix& g) override {
    Matrix gi(g.rows(), g.cols());
    for (std::size_t j = 0; j < g.cols(); ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) proj += g(i, j) * out(i, j);
      for (std::size_t i = 0; i < g.rows(); ++i) gi(i, j) = (g(i, j) - proj * out(i, j)) / norms[j];
    }
    return {gi};
  }
};

struct StopGradient final : Op {
  std::string_view name() const override { return "stop_gradient"; }
  Matrix forward(std::span<const Matrix* const> in) override { return *in[0]; }
  std::vector<Matrix> backward(std::span<const Matrix* const>, const Matrix&, const Matrix&) override {
    return {Matrix()};
  }
};

// scalar = c * ||x||_F^2
struct ScaledSquaredNorm final : Op {
  explicit ScaledSquaredNorm(double c) : c(c) {}
  double c;
  std::string_view name() const override { return "scaled_squared_norm"; }
  Matrix forward(std::span<const Matrix* const> in) override { return Matrix(1, 1, c * squared_norm(*in[0])); }
  std::vector<Matrix> backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g) override {
    return {*in[0] * (2.0 * c * g.scalar())};
  }
};

}  // namespace ops

inline Slot matmul(Tape& t, Slot a, Slot b) { return t.record(std::make_unique<ops::MatMul>(), {a, b}); }
inline Slot add(Tape& t, Slot a, Slot b) { return t.record(std::make_unique<ops::Add>(), {a, b}); }
inline Slot sub(Tape& t, Slot a, Slot b) { return t.record(std::make_unique<ops::Sub>(), {a, b}); }
inline Slot scale(Tape& t, Slot a, double c) { return t.record(std::make_unique<ops::Scale>(c), {a}); }
inline Slot transpose(Tape& t, Slot a) { return t.record(std::make_unique<ops::Transpose>(), {a}); }
inline Slot add_bias(Tape& t, Slot x, Slot b) { return t.record(std::make_unique<ops::AddBias>(), {x, b}); }
inline Slot relu(Tape& t, Slot a) { return t.record(std::make_unique<ops::Relu>(), {a}); }
inline Slot center_rows(Tape& t, Slot a) { return t.record(std::make_unique<ops::CenterRows>(), {a}); }
inline Slot center_cols(Tape& t, Slot a) { return t.record(std::make_unique<ops::CenterCols>(), {a}); }
inline Slot standardize_rows(Tape& t, Slot a, double eps) {
  return t.record(std::make_unique<ops::StandardizeRows>(eps), {a});
}
inline Slot normalize_cols(Tape& t, Slot a) { return t.record(std::make_unique<ops::NormalizeCols>(), {a}); }
inline Slot stop_gradient(Tape& t, Slot a) { return t.record(std::make_unique<ops::StopGradient>(), {a}); }
inline Slot scaled_squared_norm(Tape& t, Slot a, double c) {
  return t.record(std::make_unique<ops::ScaledSquaredNorm>(c), {a});
}

/// Central finite differences of the scalar in `seed` with respect to leaf
/// `leaf`, step h = 1e-5 * (1 + |x|). The tape is replayed for every probe
/// and restored afterwards.
inline Matrix finite_difference(Tape& t, Slot seed, Slot leaf, double rel_step = 1e-5) {
  Matrix x0 = t.value(leaf);
  Matrix g(x0.rows(), x0.cols());
  for (std::size_t k = 0; k < x0.size(); ++k) {
    const double h = rel_step * (1.0 + std::abs(x0.data()[k]));
    Matrix xp = x0;
    xp.data()[k] += h;
    t.set_leaf(leaf, xp);
    t.replay();
    const double fp = t.value(seed).scalar();
    Matrix xm = x0;
    xm.data()[k] -= h;
    t.set_leaf(leaf, xm);
    t.replay();
    const double fm = t.value(seed).scalar();
    g.data()[k] = (fp - fm) / (2.0 * h);
  }
  t.set_leaf(leaf, x0);
  t.replay();
  return g;
}

/// Normwise relative error ||a - b||_F / max(||b||_F, floor).
inline double relative_error(const Matrix& analytic, const Matrix& reference, double floor = 1e-12) {
  return frobenius_norm(analytic - reference) / std::max(frobenius_norm(reference), floor);
}

}  // namespace whitenlab::tape
