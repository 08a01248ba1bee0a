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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "whitenlab/experiment.hpp"
#include "test_support.hpp"

namespace whitenlab {
namespace {

using testing_support::random_matrix;

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void expect_rows_identical(const MetricsRow& a, const MetricsRow& b) {
  EXPECT_EQ(a.epoch, b.epoch);
  EXPECT_TRUE(same_bits(a.loss, b.loss)) << a.loss << " vs " << b.loss;
  EXPECT_EQ(a.rank_z, b.rank_z);
  EXPECT_EQ(a.rank_h, b.rank_h);
  EXPECT_TRUE(same_bits(a.stable_rank_z, b.stable_rank_z));
  EXPECT_TRUE(same_bits(a.stable_rank_h, b.stable_rank_h));
  EXPECT_TRUE(same_bits(a.neg_cos, b.neg_cos));
  EXPECT_TRUE(same_bits(a.linear_acc, b.linear_acc));
  EXPECT_TRUE(same_bits(a.knn_acc, b.knn_acc));
  EXPECT_EQ(a.skipped_steps, b.skipped_steps);
}

// Small but complete run: 30 points per class, narrow projector.
TrainConfig quick_config(TrainMethod m, std::size_t epochs) {
  TrainConfig c;
  c.method = m;
  c.epochs = epochs;
  c.batch_m = 32;
  c.warmup_iters = 10;
  c.model.projector_hidden = {32};
  c.model.d_z = 8;
  c.linear_eval = false;
  return c;
}

DatasetSpec quick_dataset() {
  DatasetSpec d;
  d.per_class = 30;
  return d;
}

// --- dataset -----------------------------------------------------------------

TEST(Dataset, DeterministicGivenSeed) {
  DatasetSpec s;
  s.per_class = 10;
  const Dataset a = generate_dataset(s), b = generate_dataset(s);
  EXPECT_EQ(max_abs_diff(a.x, b.x), 0.0);
  EXPECT_EQ(a.labels, b.labels);
  s.seed = 1;
  EXPECT_GT(max_abs_diff(a.x, generate_dataset(s).x), 0.0);
}

TEST(Dataset, NoiselessPointsSitOnSeparatedMeans) {
  DatasetSpec s;
  s.per_class = 3;
  s.noise_sigma = 0.0;
  s.intrinsic_dim = 0;
  s.class_sep = 1.5;
  const Dataset d = generate_dataset(s);
  ASSERT_EQ(d.size(), 30u);
  auto col_dist = [&](std::size_t p, std::size_t q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d.x.rows(); ++i) acc += (d.x(i, p) - d.x(i, q)) * (d.x(i, p) - d.x(i, q));
    return std::sqrt(acc);
  };
  double closest = 1e300;
  for (std::size_t p = 0; p < d.size(); ++p) {
    for (std::size_t q = p + 1; q < d.size(); ++q) {
      if (d.labels[p] == d.labels[q]) {
        EXPECT_EQ(col_dist(p, q), 0.0);
      } else {
        closest = std::min(closest, col_dist(p, q));
      }
    }
  }
  EXPECT_GE(closest, s.class_sep * (1 - 1e-6));
  EXPECT_NEAR(closest, s.class_sep, 1e-12);
}

TEST(Dataset, WellSeparatedClassesGivePerfectNearestNeighbour) {
  DatasetSpec s;
  s.classes = 2;
  s.per_class = 50;
  s.class_sep = 50.0;
  const DatasetSplit sp = split_dataset(generate_dataset(s), 0.8, s.seed);
  EXPECT_EQ(knn_accuracy(sp.train.x, sp.train.labels, sp.test.x, sp.test.labels, 2, 1), 1.0);
}

TEST(Dataset, SplitIsSeededPartition) {
  DatasetSpec s;
  s.per_class = 10;
  const Dataset d = generate_dataset(s);
  const DatasetSplit a = split_dataset(d, 0.8, 3), b = split_dataset(d, 0.8, 3);
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.test.size(), 20u);
  EXPECT_EQ(max_abs_diff(a.test.x, b.test.x), 0.0);
  EXPECT_THROW(split_dataset(d, 1.0, 3), Error);
}

TEST(Dataset, InvalidSpecRejected) {
  DatasetSpec s;
  s.intrinsic_dim = 40;
  EXPECT_THROW(generate_dataset(s), Error);
  s = DatasetSpec{};
  s.per_class = 1;
  EXPECT_THROW(generate_dataset(s), Error);
}

// --- augment -----------------------------------------------------------------

TEST(Augment, NoopConfigCopiesInput) {
  AugmentConfig cfg{0.0, 1.0, 1.0, 0.0, 3};
  const std::vector<double> x{1.0, -2.0, 3.5};
  Rng rng(0, "augment");
  const auto views = augment(x, cfg, rng);
  ASSERT_EQ(views.size(), 3u);
  for (const auto& v : views) EXPECT_EQ(v, x);
}

TEST(Augment, SameStreamSameViews) {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  Rng a(7, "augment"), b(7, "augment");
  EXPECT_EQ(augment(x, AugmentConfig{}, a), augment(x, AugmentConfig{}, b));
  const auto v = augment(x, AugmentConfig{}, a);
  EXPECT_NE(v[0], v[1]);
}

TEST(Augment, InvalidConfigRejected) {
  const std::vector<double> x{1.0};
  Rng rng(0);
  EXPECT_THROW(augment(x, AugmentConfig{0.1, 0.8, 1.2, 1.0, 2}, rng), Error);
  EXPECT_THROW(augment(x, AugmentConfig{0.1, 1.2, 0.8, 0.0, 2}, rng), Error);
  EXPECT_THROW(augment(x, AugmentConfig{0.1, 0.8, 1.2, 0.0, 1}, rng), Error);
}

TEST(Augment, BatchColumnsFollowTheirSource) {
  Rng rng(2);
  const Matrix batch = random_matrix(5, 4, rng);
  const auto views = augment_batch(batch, AugmentConfig{0.0, 2.0, 2.0, 0.0, 2}, rng);
  ASSERT_EQ(views.size(), 2u);
  for (const Matrix& v : views) EXPECT_LT(max_abs_diff(v, 2.0 * batch), 1e-15);
}

// --- forward -----------------------------------------------------------------

TEST(Forward, ShapesAndZeroModel) {
  Rng init(0, "init");
  ModelConfig mc;
  SiameseModel m = make_model(32, mc, init);
  EXPECT_EQ(m.d_h(), 64u);
  EXPECT_EQ(m.d_z(), 16u);
  Rng rng(1);
  const Matrix x = random_matrix(32, 10, rng);
  auto [h, z] = infer(m, x);
  EXPECT_EQ(h.rows(), 64u);
  EXPECT_EQ(h.cols(), 10u);
  EXPECT_EQ(z.rows(), 16u);

  for (Matrix* p : m.parameters()) *p = Matrix(p->rows(), p->cols());
  std::tie(h, z) = infer(m, x);
  EXPECT_EQ(max_abs(h), 0.0);
  EXPECT_EQ(max_abs(z), 0.0);
  EXPECT_THROW(infer(m, random_matrix(31, 2, rng)), Error);
}

TEST(Forward, IdentityLayersPassPositiveInputThrough) {
  SiameseModel m;
  m.input_dim = 3;
  m.encoder.push_back(DenseLayer{Matrix::identity(3), Matrix(3, 1), false, true});
  m.projector.push_back(DenseLayer{Matrix::identity(3), Matrix(3, 1), false, false});
  const Matrix x{{1, 2}, {3, 4}, {5, 6}};
  auto [h, z] = infer(m, x);
  EXPECT_EQ(max_abs_diff(h, x), 0.0);
  EXPECT_EQ(max_abs_diff(z, x), 0.0);
}

TEST(Forward, TapeGradientsMatchFiniteDifferences) {
  Rng init(3, "init");
  ModelConfig mc;
  mc.encoder_widths = {6, 5};
  mc.encoder_standardize = true;
  mc.projector_hidden = {7};
  mc.d_z = 4;
  const SiameseModel m = make_model(5, mc, init);
  Rng rng(4);
  ForwardPass f = forward(m, random_matrix(5, 9, rng));
  const tape::Slot loss = tape::scaled_squared_norm(f.tape, f.out.z, 0.5);
  const tape::Gradients g = f.tape.backward(loss);
  for (tape::Slot p : f.bound.params) {
    const Matrix fd = tape::finite_difference(f.tape, loss, p);
    EXPECT_LT(tape::relative_error(g[p], fd), 1e-5);
  }
}

// --- training step -----------------------------------------------------------

TEST(Schedule, WarmupThenDrops) {
  TrainConfig c;
  c.lr = 1.0;
  c.warmup_iters = 4;
  c.epochs = 8;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 1), 0.25);
  EXPECT_DOUBLE_EQ(learning_rate(c, 3, 1), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 50, 6), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 50, 7), 0.2);
  EXPECT_NEAR(learning_rate(c, 50, 8), 0.04, 1e-15);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  TrainConfig c = quick_config(TrainMethod::ZCA, 1);
  Rng init(0, "init"), rng(1), part(1, "partition");
  SiameseModel m = make_model(32, c.model, init);
  const SiameseModel before = m;
  Adam adam(static_cast<const SiameseModel&>(m).parameters());
  const Matrix batch = random_matrix(32, 16, rng);
  for (int s = 0; s < 3; ++s) train_step(m, adam, augment_batch(batch, c.augment, rng), c, 0.0, part);
  const auto pa = before.parameters();
  const auto pb = static_cast<const SiameseModel&>(m).parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(max_abs_diff(*pa[k], *pb[k]), 0.0);
  EXPECT_EQ(adam.steps(), 3u);
}

TEST(TrainStep, ZcaLossDecreasesOverFiftySteps) {
  TrainConfig c = quick_config(TrainMethod::ZCA, 1);
  c.loss_variant = LossVariant::Normalized;
  const DatasetSplit data = split_dataset(generate_dataset(DatasetSpec{}), 0.8, 0);
  Rng init(0, "init"), aug(0, "augment"), part(0, "partition");
  SiameseModel m = make_model(32, c.model, init);
  Adam adam(static_cast<const SiameseModel&>(m).parameters());
  const Matrix batch = select_cols(data.train.x, 0, 64);
  auto eval = [&] {
    Rng fixed(9);
    tape::Tape t;
    BoundModel b = bind(t, m, false);
    std::vector<tape::Slot> zs;
    for (const Matrix& v : augment_batch(batch, c.augment, fixed)) zs.push_back(record_forward(t, b, t.leaf(v, false)).z);
    return t.value(record_training_loss(t, zs, c, std::nullopt)).scalar();
  };
  const double initial = eval();
  for (int s = 0; s < 50; ++s) train_step(m, adam, augment_batch(batch, c.augment, aug), c, 3e-3, part);
  EXPECT_LT(eval(), initial);
}

TEST(TrainStep, RandomGroupsDrawFreshPartitions) {
  TrainConfig c = quick_config(TrainMethod::CWRGP, 1);
  c.group_g = 4;
  c.model.d_z = 16;
  Rng stream(0, "partition");
  const auto a = step_partition(c, stream), b = step_partition(c, stream);
  ASSERT_TRUE(a && b);
  EXPECT_NE(a->assignment, b->assignment);
  c.method = TrainMethod::CW;
  Rng s2(0, "partition");
  EXPECT_EQ(step_partition(c, s2)->assignment, step_partition(c, s2)->assignment);
}

// --- runs --------------------------------------------------------------------

TEST(Run, OneEpochGivesOneRow) {
  const MetricsLog log = run_experiment(quick_config(TrainMethod::ZCA, 1), quick_dataset());
  ASSERT_EQ(log.rows.size(), 1u);
  EXPECT_EQ(log.rows[0].epoch, 1u);
  EXPECT_TRUE(std::isfinite(log.rows[0].loss));
  EXPECT_TRUE(std::isfinite(log.rows[0].knn_acc));
}

TEST(Run, IdenticalSeedsGiveIdenticalTrajectories) {
  TrainConfig c = quick_config(TrainMethod::CWRGP, 3);
  c.group_g = 2;
  c.batch_m = 16;
  c.model.d_z = 64;
  c.linear_eval = true;
  Experiment a(c, quick_dataset()), b(c, quick_dataset());
  const MetricsLog la = a.run(), lb = b.run();
  ASSERT_EQ(la.rows.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) expect_rows_identical(la.rows[k], lb.rows[k]);
  const auto pa = a.model().parameters(), pb = b.model().parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(max_abs_diff(*pa[k], *pb[k]), 0.0);

  c.seed = 1;
  EXPECT_FALSE(same_bits(run_experiment(c, quick_dataset()).rows[0].loss, la.rows[0].loss));
}

TEST(Run, EveryMethodCompletes) {
  for (TrainMethod m : {TrainMethod::Plain, TrainMethod::BNStd, TrainMethod::CD, TrainMethod::PCA, TrainMethod::VICReg,
                        TrainMethod::CW, TrainMethod::CWRGPCov}) {
    TrainConfig c = quick_config(m, 2);
    if (m == TrainMethod::CW || m == TrainMethod::CWRGPCov) {
      c.batch_m = 8;
      c.model.d_z = 64;
      c.group_g = m == TrainMethod::CW ? 1 : 4;
      c.cov_loss_weight = 1e-3;
    }
    const MetricsLog log = run_experiment(c, quick_dataset());
    EXPECT_EQ(log.rows.size(), 2u) << train_method_name(m);
    EXPECT_TRUE(std::isfinite(log.final_row().loss)) << train_method_name(m);
  }
}

TEST(Run, SmallBatchRandomGroupsStayFinite) {
  TrainConfig c = quick_config(TrainMethod::CWRGP, 3);
  c.batch_m = 8;
  c.model.d_z = 128;
  c.group_g = 4;  // d/g = 32 > m = 8
  Experiment e(c, quick_dataset());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(std::isfinite(e.run_epoch().loss));
  EXPECT_TRUE(e.model().all_finite());
}

TEST(Run, WhiteningKeepsEmbeddingFullRank) {
  TrainConfig c = quick_config(TrainMethod::ZCA, 4);
  for (const MetricsRow& r : run_experiment(c, quick_dataset()).rows) EXPECT_EQ(r.rank_z, c.model.d_z);
}

TEST(Run, ProbeRecordsEveryEpoch) {
  TrainConfig c = quick_config(TrainMethod::PCA, 3);
  c.group_g = 2;
  c.probe = true;
  const MetricsLog log = run_experiment(c, quick_dataset());
  ASSERT_TRUE(log.probe.has_value());
  EXPECT_EQ(log.probe->snapshots, 3u);
  EXPECT_GT(log.probe->mean_z_var, 0.0);
}

TEST(Run, ZcaBeatsPlainOnLinearProbe) {
  TrainConfig c;
  c.epochs = 20;
  c.loss_variant = LossVariant::Normalized;
  c.weight_decay = 1e-3;
  c.knn_eval = false;
  c.method = TrainMethod::Plain;
  const double plain = run_experiment(c, DatasetSpec{}).final_row().linear_acc;
  c.method = TrainMethod::ZCA;
  const double zca = run_experiment(c, DatasetSpec{}).final_row().linear_acc;
  EXPECT_GT(zca, plain);
}

// --- evaluation --------------------------------------------------------------

TEST(Evaluate, ZeroModelScoresNearChance) {
  TrainConfig c = quick_config(TrainMethod::ZCA, 1);
  c.linear_eval = true;
  DatasetSpec s;
  s.per_class = 100;
  const DatasetSplit data = split_dataset(generate_dataset(s), 0.8, 0);
  Rng init(0, "init");
  SiameseModel m = make_model(32, c.model, init);
  for (Matrix* p : m.parameters()) *p = Matrix(p->rows(), p->cols());
  auto [lin, knn] = evaluate_accuracy(m, data, c);
  // 200 test points: chance is 0.1 with a binomial std of about 0.021.
  EXPECT_NEAR(lin, 0.1, 0.07);
  EXPECT_NEAR(knn, 0.1, 0.07);
}

TEST(Evaluate, IdentityEncoderSeparatesDistantClasses) {
  DatasetSpec s;
  s.ambient_dim = 4;
  s.classes = 3;
  s.per_class = 20;
  s.class_sep = 40.0;
  const DatasetSplit data = split_dataset(generate_dataset(s), 0.8, 0);
  SiameseModel m;
  m.input_dim = 4;
  // Two ReLU halves keep the sign: h = [relu(x); relu(-x)].
  Matrix w(8, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    w(i, i) = 1.0;
    w(i + 4, i) = -1.0;
  }
  m.encoder.push_back(DenseLayer{w, Matrix(8, 1), false, true});
  m.projector.push_back(DenseLayer{Matrix::identity(8), Matrix(8, 1), false, false});
  TrainConfig c;
  auto [lin, knn] = evaluate_accuracy(m, data, c);
  EXPECT_EQ(knn, 1.0);
  EXPECT_EQ(lin, 1.0);
}

// --- identities --------------------------------------------------------------

TEST(GradientEquivalence, ProxyMatchesSymmetricLoss) {
  Rng rng(0, "equivalence");
  for (const EquivalenceTrial& t : equivalence_trials(20, rng)) {
    EXPECT_LT(t.result.max_abs_diff, 1e-8) << method_name(t.method);
    EXPECT_LT(t.result.relative(), 1e-8);
    EXPECT_GT(t.result.grad_scale, 1e-6);
  }
}

TEST(GradientEquivalence, FrozenPhiOnOneSideBreaksIt) {
  Rng rng(0, "equivalence");
  for (const EquivalenceTrial& t : equivalence_trials(6, rng, true)) EXPECT_GT(t.result.relative(), 1e-3);
}

TEST(GradientEquivalence, IdenticalViewsGiveZeroGradients) {
  Rng rng(5);
  const SiameseModel m = toy_model(8, 12, 4, rng);
  const Matrix x = random_matrix(8, 16, rng);
  const GradientComparison r = check_gradient_equivalence(m, x, x, WhitenConfig{WhitenMethod::ZCA, std::nullopt, 0, 0.0});
  EXPECT_LT(r.grad_scale, 1e-12);
  EXPECT_LT(r.max_abs_diff, 1e-12);
}

TEST(FullRankOptimum, RandomSpectraReachZeroLoss) {
  Rng rng(0, "full_rank_optimum");
  for (std::size_t d = 2; d <= 8; ++d)
    for (double v : check_full_rank_optimum(d, 4 * d, 3, rng)) EXPECT_LT(v, 1e-10) << "d_z=" << d;
}

TEST(FullRankOptimum, Examples) {
  Rng rng(1);
  const Matrix target = full_rank_optimum_target(3, 12, rng);
  EXPECT_LT(full_rank_optimum_loss(target, std::vector<double>(3, std::sqrt(12.0))), 1e-20);
  EXPECT_LT(full_rank_optimum_loss(full_rank_optimum_target(2, 8, rng), {2.0, 1.0}), 1e-10);
  try {
    full_rank_optimum_loss(target, {2.0, 1.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::PreconditionViolation);
  }
  EXPECT_THROW(full_rank_optimum_target(4, 4, rng), Error);
}

// --- projector study ---------------------------------------------------------

TEST(ProjectorStudy, CellsAreKeyedAndMatchSingleRuns) {
  TrainConfig c = quick_config(TrainMethod::ZCA, 1);
  const auto study = projector_study(c, quick_dataset(), {{"32", {32}}, {"64", {64}}, {"128", {128}}});
  ASSERT_EQ(study.size(), 3u);
  for (const char* k : {"32", "64", "128"}) EXPECT_EQ(study.count(k), 1u);
  c.model.projector_hidden = {64};
  expect_rows_identical(study.at("64").final_row(), run_experiment(c, quick_dataset()).final_row());
  EXPECT_EQ(study.at("128").config.model.projector_hidden, std::vector<std::size_t>{128});
}

}  // namespace
}  // namespace whitenlab
