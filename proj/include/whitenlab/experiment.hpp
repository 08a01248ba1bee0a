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

// Siamese training harness: configuration, the per-step loss for every
// method, the epoch loop with per-epoch diagnostics, and the identity
// checks that run on toy models.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "whitenlab/dataset.hpp"
#include "whitenlab/diagnostics.hpp"
#include "whitenlab/evaluate.hpp"
#include "whitenlab/losses.hpp"
#include "whitenlab/model.hpp"
#include "whitenlab/whitening.hpp"

namespace whitenlab {

enum class TrainMethod { Plain, BNStd, ZCA, CD, PCA, CW, CWRGP, VICReg, CWRGPCov };

inline std::string_view train_method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::Plain: return "plain";
    case TrainMethod::BNStd: return "bn";
    case TrainMethod::ZCA: return "zca";
    case TrainMethod::CD: return "cd";
    case TrainMethod::PCA: return "pca";
    case TrainMethod::CW: return "cw";
    case TrainMethod::CWRGP: return "cw-rgp";
    case TrainMethod::VICReg: return "vicreg";
    case TrainMethod::CWRGPCov: return "cw-rgp-cov";
  }
  return "?";
}

inline TrainMethod parse_train_method(std::string_view s) {
  for (TrainMethod m : {TrainMethod::Plain, TrainMethod::BNStd, TrainMethod::ZCA, TrainMethod::CD, TrainMethod::PCA,
                        TrainMethod::CW, TrainMethod::CWRGP, TrainMethod::VICReg, TrainMethod::CWRGPCov}) {
    if (s == train_method_name(m)) return m;
  }
  throw Error(Errc::InvalidArgument, "unknown training method '" + std::string(s) + "'");
}

enum class LossVariant { Raw, Normalized };

struct TrainConfig {
  TrainMethod method = TrainMethod::ZCA;
  std::size_t group_g = 1;
  std::size_t batch_m = 64;
  std::size_t epochs = 100;
  double lr = 3e-3;
  std::size_t warmup_iters = 100;
  double weight_decay = 1e-5;
  std::vector<double> lr_drops{0.75, 0.875};  // fractions of the epoch budget
  double lr_drop_factor = 0.2;
  std::uint64_t seed = 0;
  LossVariant loss_variant = LossVariant::Raw;
  double eps = 1e-6;
  VicregParams vicreg;
  double cov_loss_weight = 0.0;
  std::size_t slice_size = 0;
  ModelConfig model;
  AugmentConfig augment;
  double train_fraction = 0.8;
  std::size_t eval_every = 0;  // 0: evaluate accuracies on the final epoch only
  bool linear_eval = true;
  bool knn_eval = true;
  std::size_t metrics_batch = 256;
  bool probe = false;
  std::size_t probe_batch = 64;
  double rank_policy = kDefaultRankPolicy;

  bool whitens() const { return method != TrainMethod::Plain && method != TrainMethod::VICReg; }
  bool random_groups() const { return method == TrainMethod::CWRGP || method == TrainMethod::CWRGPCov; }
  WhitenMethod whiten_method() const {
    switch (method) {
      case TrainMethod::BNStd: return WhitenMethod::BNStd;
      case TrainMethod::CD: return WhitenMethod::CD;
      case TrainMethod::PCA: return WhitenMethod::PCA;
      case TrainMethod::CW:
      case TrainMethod::CWRGP:
      case TrainMethod::CWRGPCov: return WhitenMethod::CW;
      default: return WhitenMethod::ZCA;
    }
  }

  void validate() const {
    model.validate();
    augment.validate();
    if (batch_m < 2) throw Error(Errc::InvalidArgument, "batch_m must be at least 2");
    if (epochs < 1) throw Error(Errc::InvalidArgument, "epochs must be at least 1");
    if (!(lr >= 0.0)) throw Error(Errc::InvalidArgument, "lr must be nonnegative");
    if (weight_decay < 0.0 || eps < 0.0 || cov_loss_weight < 0.0 || vicreg.alpha < 0.0) {
      throw Error(Errc::InvalidArgument, "weight_decay, eps, cov_loss_weight and vicreg.alpha must be >= 0");
    }
    if (group_g == 0 || model.d_z % group_g != 0) {
      throw Error(Errc::NotDivisible, "d_z=" + std::to_string(model.d_z) + " is not divisible by group_g=" +
                                          std::to_string(group_g));
    }
    if (slice_size != 0 && batch_m % slice_size != 0) {
      throw Error(Errc::NotDivisible, "batch_m is not divisible by slice_size");
    }
    for (double f : lr_drops)
      if (!(f > 0.0 && f <= 1.0)) throw Error(Errc::InvalidArgument, "lr drop fractions must lie in (0,1]");
    if (metrics_batch < 2 || probe_batch < 2) throw Error(Errc::InvalidArgument, "metric batches need >= 2 points");
  }
};

/// Learning rate at global iteration `iter` (0-based) in epoch `epoch`
/// (1-based): linear warmup, then a constant with multiplicative drops.
inline double learning_rate(const TrainConfig& c, std::size_t iter, std::size_t epoch) {
  double lr = c.lr;
  if (c.warmup_iters > 0 && iter < c.warmup_iters) {
    lr *= static_cast<double>(iter + 1) / static_cast<double>(c.warmup_iters);
  }
  for (double f : c.lr_drops) {
    const auto at = static_cast<std::size_t>(std::floor(f * static_cast<double>(c.epochs)));
    if (epoch > at) lr *= c.lr_drop_factor;
  }
  return lr;
}

inline WhitenConfig whiten_config(const TrainConfig& c, std::optional<GroupSpec> groups) {
  return WhitenConfig{c.whiten_method(), std::move(groups), c.slice_size, c.eps};
}

/// Channel partition for one step: fixed methods reuse the contiguous split,
/// random methods draw a fresh permutation from `stream`.
inline std::optional<GroupSpec> step_partition(const TrainConfig& c, Rng& stream) {
  if (c.group_g <= 1 && !c.random_groups()) return std::nullopt;
  const PartitionMode mode = c.random_groups() ? PartitionMode::Random : PartitionMode::Fixed;
  return make_group_partition(c.model.d_z, c.group_g, mode, stream, c.seed);
}

/// Records the training loss over the embeddings of all views.
inline tape::Slot record_training_loss(tape::Tape& t, const std::vector<tape::Slot>& zs, const TrainConfig& c,
                                       const std::optional<GroupSpec>& groups) {
  std::vector<tape::Slot> w = zs;
  if (c.whitens()) {
    const WhitenConfig wc = whiten_config(c, groups);
    for (auto& s : w) s = record_whiten(t, s, wc);
  }
  std::vector<tape::Slot> terms;
  for (std::size_t a = 0; a < w.size(); ++a) {
    for (std::size_t b = a + 1; b < w.size(); ++b) {
      tape::Slot pair;
      if (c.method == TrainMethod::Plain) {
        pair = record_mse_norm(t, w[a], w[b]);
      } else if (c.method == TrainMethod::VICReg) {
        tape::Slot pen = tape::add(t, record_vicreg_penalty(t, w[a], c.vicreg.lambda),
                                   record_vicreg_penalty(t, w[b], c.vicreg.lambda));
        pair = tape::add(t, record_whitening_mse(t, w[a], w[b]), tape::scale(t, pen, c.vicreg.alpha));
      } else if (c.loss_variant == LossVariant::Normalized) {
        pair = record_mse_norm(t, w[a], w[b]);
      } else {
        pair = record_whitening_mse(t, w[a], w[b]);
      }
      terms.push_back(pair);
    }
  }
  tape::Slot loss = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) loss = tape::add(t, loss, terms[k]);
  if (terms.size() > 1) loss = tape::scale(t, loss, 1.0 / static_cast<double>(terms.size()));
  if (c.method == TrainMethod::CWRGPCov && c.cov_loss_weight > 0.0) {
    tape::Slot cov = record_channel_cov(t, zs.front());
    for (std::size_t v = 1; v < zs.size(); ++v) cov = tape::add(t, cov, record_channel_cov(t, zs[v]));
    loss = tape::add(t, loss, tape::scale(t, cov, c.cov_loss_weight / static_cast<double>(zs.size())));
  }
  return loss;
}

struct StepResult {
  double loss = 0.0;
  bool skipped = false;  // a degenerate spectrum blocked the backward pass
};

/// One Adam update on a set of augmented views.
inline StepResult train_step(SiameseModel& model, Adam& adam, const std::vector<Matrix>& views, const TrainConfig& c,
                             double lr, Rng& partition_stream) {
  tape::Tape t;
  BoundModel b = bind(t, model);
  std::vector<tape::Slot> zs;
  for (const Matrix& v : views) zs.push_back(record_forward(t, b, t.leaf(v, false)).z);
  tape::Slot loss = record_training_loss(t, zs, c, step_partition(c, partition_stream));
  StepResult r{t.value(loss).scalar(), false};
  if (!std::isfinite(r.loss)) throw Error(Errc::NonConvergence, "non-finite training loss");
  std::optional<tape::Gradients> g;
  try {
    g = t.backward(loss);
  } catch (const Error& e) {
    if (e.code() != Errc::DegenerateSpectrum) throw;
    r.skipped = true;
    return r;
  }
  std::vector<Matrix> grads;
  for (tape::Slot s : b.params) grads.push_back((*g)[s]);
  adam.step(model.parameters(), grads, lr, c.weight_decay);
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::size_t epoch = 0;
  double loss = kNaN;
  std::size_t rank_z = 0;
  std::size_t rank_h = 0;
  double stable_rank_z = kNaN;
  double stable_rank_h = kNaN;
  double norm_rank_z = kNaN;
  double norm_rank_h = kNaN;
  double norm_srank_z = kNaN;
  double norm_srank_h = kNaN;
  double neg_cos = kNaN;
  double linear_acc = kNaN;
  double knn_acc = kNaN;
  std::size_t skipped_steps = 0;
};

struct MetricsLog {
  TrainConfig config;
  DatasetSpec dataset;
  std::vector<MetricsRow> rows;
  std::size_t degenerate_events = 0;
  double raw_knn_baseline = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
  std::optional<ProbeSummary> probe;

  const MetricsRow& final_row() const { return rows.back(); }
};

inline void fill_spectral(MetricsRow& row, const Matrix& h, const Matrix& z, double policy) {
  const SpectralReport rz = spectral_report(z, policy), rh = spectral_report(h, policy);
  row.rank_z = rz.rank;
  row.rank_h = rh.rank;
  row.stable_rank_z = rz.stable_rank;
  row.stable_rank_h = rh.stable_rank;
  row.norm_rank_z = rz.normalized_rank;
  row.norm_rank_h = rh.normalized_rank;
  row.norm_srank_z = rz.normalized_stable_rank;
  row.norm_srank_h = rh.normalized_stable_rank;
  try {
    row.neg_cos = neg_cosine(z);
  } catch (const Error& e) {
    if (e.code() != Errc::ZeroVector) throw;
  }
}

inline std::pair<double, double> evaluate_accuracy(const SiameseModel& model, const DatasetSplit& data,
                                                   const TrainConfig& c) {
  const Matrix htr = infer(model, data.train.x).first;
  const Matrix hte = infer(model, data.test.x).first;
  double lin = std::numeric_limits<double>::quiet_NaN(), knn = lin;
  if (c.linear_eval) lin = linear_probe(htr, data.train.labels, hte, data.test.labels, data.train.classes).accuracy;
  if (c.knn_eval) knn = knn_accuracy(htr, data.train.labels, hte, data.test.labels, data.train.classes, 5);
  return {lin, knn};
}

// ---------------------------------------------------------------------------
// Experiment loop

class Experiment {
 public:
  Experiment(TrainConfig cfg, DatasetSpec spec)
      : cfg_(std::move(cfg)),
        spec_(spec),
        augment_rng_(cfg_.seed, "augment"),
        partition_rng_(cfg_.seed, "partition") {
    cfg_.validate();
    data_ = split_dataset(generate_dataset(spec_), cfg_.train_fraction, spec_.seed);
    if (data_.train.size() < cfg_.batch_m) throw Error(Errc::InvalidArgument, "training split smaller than batch_m");
    Rng init(cfg_.seed, "init");
    model_ = make_model(spec_.ambient_dim, cfg_.model, init);
    adam_ = Adam(static_cast<const SiameseModel&>(model_).parameters());
    metrics_x_ = select_cols(data_.train.x, 0, std::min(cfg_.metrics_batch, data_.train.size()));
    order_.resize(data_.train.size());
    std::iota(order_.begin(), order_.end(), 0);
    log_.config = cfg_;
    log_.dataset = spec_;
    if (cfg_.knn_eval) {
      log_.raw_knn_baseline = knn_accuracy(data_.train.x, data_.train.labels, data_.test.x, data_.test.labels,
                                           data_.train.classes, 5);
    }
    if (cfg_.probe) {
      probe_x_ = select_cols(data_.train.x, 0, std::min(cfg_.probe_batch, data_.train.size()));
      Rng fixed(cfg_.seed, "probe");
      probe_groups_ = cfg_.group_g > 1 ? std::optional<GroupSpec>(make_group_partition(
                                             cfg_.model.d_z, cfg_.group_g, PartitionMode::Fixed, fixed, cfg_.seed))
                                       : std::nullopt;
      probe_.emplace(infer(model_, probe_x_).second);
    }
  }

  const SiameseModel& model() const { return model_; }
  const DatasetSplit& data() const { return data_; }
  const MetricsLog& log() const { return log_; }
  const std::optional<VarianceProbe>& probe() const { return probe_; }

  /// Trains one epoch and appends its metrics row.
  const MetricsRow& run_epoch() {
    const std::size_t epoch = log_.rows.size() + 1;
    augment_rng_.shuffle(order_.begin(), order_.end());
    const std::size_t steps = data_.train.size() / cfg_.batch_m;
    double loss_sum = 0.0;
    std::size_t counted = 0;
    MetricsRow row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      Matrix batch(data_.train.x.rows(), cfg_.batch_m);
      for (std::size_t k = 0; k < cfg_.batch_m; ++k) {
        const std::size_t src = order_[s * cfg_.batch_m + k];
        for (std::size_t i = 0; i < batch.rows(); ++i) batch(i, k) = data_.train.x(i, src);
      }
      std::vector<Matrix> views = augment_batch(batch, cfg_.augment, augment_rng_);
      StepResult r;
      try {
        r = train_step(model_, adam_, views, cfg_, learning_rate(cfg_, iter_, epoch), partition_rng_);
      } catch (const Error& e) {
        throw Error(e.code(), "epoch " + std::to_string(epoch) + " step " + std::to_string(s) + ": " + e.what());
      }
      ++iter_;
      if (r.skipped) {
        ++row.skipped_steps;
        ++log_.degenerate_events;
      }
      loss_sum += r.loss;
      ++counted;
    }
    row.loss = loss_sum / static_cast<double>(counted);

    auto [h, z] = infer(model_, metrics_x_);
    fill_spectral(row, h, z, cfg_.rank_policy);
    const bool last = epoch == cfg_.epochs;
    if ((cfg_.linear_eval || cfg_.knn_eval) && (last || (cfg_.eval_every > 0 && epoch % cfg_.eval_every == 0))) {
      std::tie(row.linear_acc, row.knn_acc) = evaluate_accuracy(model_, data_, cfg_);
    }
    if (probe_) {
      WhitenOutput w = whiten(infer(model_, probe_x_).second, whiten_config(cfg_, probe_groups_));
      probe_->record(epoch, w.whitened, w.phi);
      if (last && probe_->size() >= 2) log_.probe = probe_->summarize();
    }
    log_.rows.push_back(row);
    return log_.rows.back();
  }

  MetricsLog run(const std::function<void(const MetricsRow&)>& on_epoch = {}) {
    while (log_.rows.size() < cfg_.epochs) {
      const MetricsRow& r = run_epoch();
      if (on_epoch) on_epoch(r);
    }
    return log_;
  }

 private:
  TrainConfig cfg_;
  DatasetSpec spec_;
  DatasetSplit data_;
  SiameseModel model_;
  Adam adam_;
  Rng augment_rng_;
  Rng partition_rng_;
  Matrix metrics_x_;
  Matrix probe_x_;
  std::optional<GroupSpec> probe_groups_;
  std::optional<VarianceProbe> probe_;
  std::vector<std::size_t> order_;
  std::size_t iter_ = 0;
  MetricsLog log_;
};

inline MetricsLog run_experiment(const TrainConfig& cfg, const DatasetSpec& spec,
                                 const std::function<void(const MetricsRow&)>& on_epoch = {}) {
  return Experiment(cfg, spec).run(on_epoch);
}

/// One run per projector configuration, keyed by label.
struct ProjectorCell {
  std::string label;
  std::vector<std::size_t> hidden;
};

inline std::map<std::string, MetricsLog> projector_study(const TrainConfig& base, const DatasetSpec& spec,
                                                         const std::vector<ProjectorCell>& grid) {
  std::map<std::string, MetricsLog> out;
  for (const auto& cell : grid) {
    TrainConfig c = base;
    c.model.projector_hidden = cell.hidden;
    out.emplace(cell.label, run_experiment(c, spec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Identity checks

struct GradientComparison {
  double max_abs_diff = 0.0;
  double grad_scale = 0.0;  // max |entry| of the reference gradient
  double relative() const { return grad_scale > 0.0 ? max_abs_diff / grad_scale : max_abs_diff; }
};

/// Parameter gradients of the symmetric whitening loss against those of the
/// stop-gradient proxy, on the same two views. `frozen_phi_view1` turns the
/// proxy into the broken variant that holds the first view's whitening
/// matrix constant.
inline GradientComparison check_gradient_equivalence(const SiameseModel& model, const Matrix& x1, const Matrix& x2,
                                                     const WhitenConfig& wc, bool frozen_phi_view1 = false) {
  auto grads = [&](bool proxy) {
    tape::Tape t;
    BoundModel b = bind(t, model);
    tape::Slot z1 = record_forward(t, b, t.leaf(x1, false)).z;
    tape::Slot z2 = record_forward(t, b, t.leaf(x2, false)).z;
    tape::Slot w1 = record_whiten(t, z1, wc, proxy && frozen_phi_view1);
    tape::Slot w2 = record_whiten(t, z2, wc);
    tape::Slot loss;
    if (!proxy) {
      loss = record_whitening_mse(t, w1, w2);
    } else {
      loss = tape::add(t, record_whitening_mse(t, w1, tape::stop_gradient(t, w2)),
                       record_whitening_mse(t, tape::stop_gradient(t, w1), w2));
    }
    tape::Gradients g = t.backward(loss);
    std::vector<Matrix> out;
    for (tape::Slot s : b.params) out.push_back(g[s]);
    return out;
  };
  const std::vector<Matrix> sym = grads(false), prox = grads(true);
  GradientComparison r;
  for (std::size_t k = 0; k < sym.size(); ++k) {
    r.max_abs_diff = std::max(r.max_abs_diff, max_abs_diff(sym[k], prox[k]));
    r.grad_scale = std::max(r.grad_scale, max_abs(sym[k]));
  }
  return r;
}

/// Small random model for the identity checks: one encoder layer and a
/// linear projector output.
inline SiameseModel toy_model(std::size_t input_dim, std::size_t width, std::size_t d_z, Rng& rng) {
  ModelConfig mc;
  mc.encoder_widths = {width};
  mc.projector_hidden = {};
  mc.d_z = d_z;
  SiameseModel m = make_model(input_dim, mc, rng);
  for (Matrix* p : m.parameters())
    for (double& v : p->data()) v += 0.1 * rng.normal();  // nonzero biases
  return m;
}

struct EquivalenceTrial {
  WhitenMethod method = WhitenMethod::ZCA;
  GradientComparison result;
};

/// Random toy models (d_z = 4, m = 16) alternating ZCA and CD.
inline std::vector<EquivalenceTrial> equivalence_trials(std::size_t trials, Rng& rng, bool frozen_phi_view1 = false) {
  constexpr std::size_t kInput = 8, kWidth = 12, kDz = 4, kBatch = 16;
  std::vector<EquivalenceTrial> out;
  for (std::size_t k = 0; k < trials; ++k) {
    const WhitenMethod m = k % 2 == 0 ? WhitenMethod::ZCA : WhitenMethod::CD;
    SiameseModel model = toy_model(kInput, kWidth, kDz, rng);
    Matrix x1(kInput, kBatch), x2(kInput, kBatch);
    for (double& v : x1.data()) v = rng.normal();
    for (double& v : x2.data()) v = rng.normal();
    out.push_back({m, check_gradient_equivalence(model, x1, x2, WhitenConfig{m, std::nullopt, 0, 0.0},
                                                 frozen_phi_view1)});
  }
  return out;
}

/// Symmetric whitening loss of Z1 = U2 diag(sigma) V2^T against the ZCA-whitened target
/// built from z2 = U2 (sqrt(m) I) V2^T.
inline double full_rank_optimum_loss(const Matrix& target, const std::vector<double>& sigma) {
  const std::size_t d = target.rows(), m = target.cols();
  if (m <= d) throw Error(Errc::PreconditionViolation, "needs m > d_z (m=" + std::to_string(m) + ", d_z=" + std::to_string(d) + ")");
  if (sigma.size() != d) throw Error(Errc::ShapeMismatch, "sigma needs one entry per channel");
  for (std::size_t i = 0; i < d; ++i) {
    if (!(sigma[i] > 0.0)) {
      throw Error(Errc::PreconditionViolation, "sigma[" + std::to_string(i) + "] = " + std::to_string(sigma[i]) +
                                                   ": Z1 must be full rank");
    }
    if (i > 0 && sigma[i] > sigma[i - 1]) throw Error(Errc::PreconditionViolation, "sigma must be nonincreasing");
  }
  Svd s = svd(target);
  Matrix z1 = matmul(scale_cols(s.left, sigma), s.rightT);
  return asym_online_loss(z1, target, WhitenConfig{WhitenMethod::ZCA, std::nullopt, 0, 0.0}).value;
}

inline Matrix full_rank_optimum_target(std::size_t d_z, std::size_t m, Rng& rng) {
  if (m <= d_z) throw Error(Errc::PreconditionViolation, "needs m > d_z");
  Matrix z2(d_z, m);
  for (double& v : z2.data()) v = rng.normal();
  return whiten(z2, WhitenConfig{WhitenMethod::ZCA, std::nullopt, 0, 0.0}).whitened;
}

/// Loss values for `draws` random spectra sigma_1 >= ... >= sigma_d > 0.
inline std::vector<double> check_full_rank_optimum(std::size_t d_z, std::size_t m, std::size_t draws, Rng& rng) {
  std::vector<double> out;
  for (std::size_t k = 0; k < draws; ++k) {
    Matrix target = full_rank_optimum_target(d_z, m, rng);
    std::vector<double> sigma(d_z);
    for (double& v : sigma) v = std::sqrt(static_cast<double>(m)) * std::exp(rng.uniform(-2.0, 2.0));
    std::sort(sigma.rbegin(), sigma.rend());
    out.push_back(full_rank_optimum_loss(target, sigma));
  }
  return out;
}

}  // namespace whitenlab
