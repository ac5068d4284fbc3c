#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fivelab/checks.hpp"
#include "fivelab/config.hpp"
#include "fivelab/train.hpp"

using namespace fivelab;

namespace {

ModelConfig tiny_config(ModelKind kind) {
  ModelConfig c;
  c.model = kind;
  c.dataset = "paraboloid";
  c.data_size = 40;
  c.hidden_dims = {8};
  c.latent_dim = 2;
  c.batch_size = 8;
  c.epochs = 3;
  c.val_size = 8;
  c.lr = 1e-3;
  c.seed = 5;
  return c;
}

std::string metrics_text(const TrainResult& r) {
  std::ostringstream os;
  write_metrics_csv(os, r.metrics);
  return os.str();
}

}  // namespace

TEST(OrthogonalInit, SquareWideAndTall) {
  Rng rng(1);
  const Matrix sq = orthogonal_init(5, 5, 1.0, rng);
  EXPECT_LT((sq.transpose() * sq - Matrix::Identity(5, 5)).norm(), 1e-10);
  const Matrix wide = orthogonal_init(3, 7, 1.0, rng);
  ASSERT_EQ(wide.rows(), 3);
  ASSERT_EQ(wide.cols(), 7);
  EXPECT_LT((wide * wide.transpose() - Matrix::Identity(3, 3)).norm(), 1e-10);
  const Matrix tall = orthogonal_init(7, 3, 1.0, rng);
  EXPECT_LT((tall.transpose() * tall - Matrix::Identity(3, 3)).norm(), 1e-10);
}

TEST(OrthogonalInit, GainScalesSingularValues) {
  Rng rng(2);
  const Eigen::JacobiSVD<Matrix> svd(orthogonal_init(4, 6, 2.0, rng));
  for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k) EXPECT_NEAR(svd.singularValues()(k), 2.0, 1e-12);
}

TEST(OrthogonalInit, NetworkBiasesZeroAndSeeded) {
  Rng a(3), b(3);
  Mlp n1 = Mlp::zeros({4, 6, 2}, Activation::SiLU);
  Mlp n2 = n1;
  n1.layers()[0].bias.setOnes();
  orthogonal_init(n1, 1.0, a);
  orthogonal_init(n2, 1.0, b);
  EXPECT_EQ(n1.flatten(), n2.flatten());
  EXPECT_TRUE(n1.layers()[0].bias.isZero(0.0));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Vector p{{1.0, -2.0, 3.0}};
  const Vector before = p;
  AdamState s = AdamState::zeros(3);
  adam_step(s, p, Vector::Zero(3), {0.1});
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepIsSignLike) {
  Vector p{{0.0, 0.0, 0.0}};
  AdamState s = AdamState::zeros(3);
  adam_step(s, p, Vector{{3.0, -0.02, 1e3}}, {0.01});
  // m_hat = g and v_hat = g^2 after bias correction.
  EXPECT_NEAR(p(0), -0.01 * 3.0 / (3.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p(1), 0.01 * 0.02 / (0.02 + 1e-8), 1e-18);
  EXPECT_NEAR(p(2), -0.01, 1e-12);
}

TEST(Adam, TwoStepHandTrace) {
  // g = 0.5 constant, lr = 0.1: both bias-corrected steps have m_hat = 0.5, v_hat = 0.25.
  Vector p{{1.0}};
  AdamState s = AdamState::zeros(1);
  adam_step(s, p, Vector{{0.5}}, {0.1});
  EXPECT_NEAR(p(0), 0.900000002, 1e-15);
  adam_step(s, p, Vector{{0.5}}, {0.1});
  EXPECT_NEAR(s.m(0), 0.095, 1e-16);
  EXPECT_NEAR(s.v(0), 0.00049975, 1e-18 * 4);
  EXPECT_NEAR(p(0), 0.800000004, 1e-15);
}

TEST(Adam, DecoupledWeightDecay) {
  Vector p{{2.0, 2.0}};
  AdamState s = AdamState::zeros(2);
  AdamConfig cfg{0.1};
  cfg.weight_decay = 0.5;
  const std::vector<ParamBlock> blocks{{"w", 0, 1, true, true}, {"log_sigma", 1, 1, true, false}};
  adam_step(s, p, Vector::Zero(2), cfg, blocks);
  EXPECT_DOUBLE_EQ(p(0), 2.0 * (1.0 - 0.05));
  EXPECT_DOUBLE_EQ(p(1), 2.0);
}

TEST(Adam, BlockOrderInvariance) {
  Rng rng(4);
  const Vector p0 = standard_normal(10, rng);
  std::vector<ParamBlock> blocks{{"a", 0, 3}, {"b", 3, 4}, {"c", 7, 3}};
  std::vector<ParamBlock> reversed(blocks.rbegin(), blocks.rend());
  Vector p1 = p0, p2 = p0;
  AdamState s1 = AdamState::zeros(10), s2 = AdamState::zeros(10);
  AdamConfig cfg{0.05};
  cfg.weight_decay = 0.1;
  for (int t = 0; t < 5; ++t) {
    const Vector g = standard_normal(10, rng);
    adam_step(s1, p1, g, cfg, blocks);
    adam_step(s2, p2, g, cfg, reversed);
  }
  EXPECT_EQ(p1, p2);
}

TEST(Adam, NonFiniteGradientNamesBlock) {
  const Model m = make_model(ModelKind::Five, 3, 2, {4}, Activation::SiLU, 0.0);
  const auto blocks = parameter_blocks(m, false);
  Vector p = m.flatten();
  Vector g = Vector::Zero(p.size());
  g(blocks[2].offset) = std::nan("");
  AdamState s = AdamState::zeros(p.size());
  try {
    adam_step(s, p, g, {}, blocks);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.layer1.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, m.flatten());
}

TEST(Adam, FrozenSigmaIsUntouched) {
  const Model m = make_model(ModelKind::Vae, 3, 1, {4}, Activation::SiLU, std::log(0.2));
  const auto blocks = parameter_blocks(m, true);
  EXPECT_EQ(blocks.back().name, "log_sigma");
  EXPECT_FALSE(blocks.back().trainable);
  Vector p = m.flatten();
  AdamState s = AdamState::zeros(p.size());
  adam_step(s, p, Vector::Ones(p.size()), {0.1}, blocks);
  EXPECT_EQ(p(p.size() - 1), std::log(0.2));
  EXPECT_NE(p(0), m.flatten()(0));
}

TEST(ModelSelection, TiesKeepEarliestEpochAndSnapshotIsACopy) {
  Model m = make_model(ModelKind::Five, 3, 1, {}, Activation::Identity, 0.0);
  BestRecord best;
  EXPECT_TRUE(update_best(best, 1, 5.0, m));
  m.noise.log_sigma = 1.0;
  EXPECT_TRUE(update_best(best, 2, 3.0, m));
  m.noise.log_sigma = 2.0;
  EXPECT_FALSE(update_best(best, 3, 3.0, m));
  EXPECT_FALSE(update_best(best, 4, std::nan(""), m));
  EXPECT_EQ(best.epoch, 2);
  EXPECT_EQ(best.snapshot->noise.log_sigma, 1.0);
  m.encoder.layers()[0].weight.setConstant(9.0);
  EXPECT_EQ(best.snapshot->encoder.layers()[0].weight(0, 0), 0.0);
}

TEST(TrainModel, OneEpochSmoke) {
  ModelConfig c = tiny_config(ModelKind::Five);
  c.data_size = 10;
  c.val_size = 0;
  c.epochs = 1;
  c.batch_size = 3;
  const TrainResult r = train_model(c, load_dataset(c));
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].epoch, 1);
  EXPECT_TRUE(std::isfinite(r.metrics[0].train_loss));
  EXPECT_EQ(r.metrics[0].val_loss, r.metrics[0].train_loss);
  EXPECT_EQ(r.metrics[0].seconds, 0.0);
  EXPECT_EQ(r.best_epoch, 1);
}

TEST(TrainModel, BitIdenticalMetricsForAllModels) {
  for (ModelKind kind : {ModelKind::Vae, ModelKind::FcVae, ModelKind::Fif, ModelKind::Five}) {
    const ModelConfig c = tiny_config(kind);
    const Dataset ds = load_dataset(c);
    const TrainResult a = train_model(c, ds), b = train_model(c, ds);
    EXPECT_EQ(metrics_text(a), metrics_text(b)) << to_string(kind);
    EXPECT_EQ(a.best_model.flatten(), b.best_model.flatten());
    ModelConfig other = c;
    other.seed = 6;
    EXPECT_NE(metrics_text(train_model(other, load_dataset(other))), metrics_text(a));
  }
}

TEST(TrainModel, BestEpochIsFirstMinimumOfValidationLoss) {
  ModelConfig c = tiny_config(ModelKind::Vae);
  c.epochs = 6;
  const TrainResult r = train_model(c, load_dataset(c));
  const auto it = std::min_element(r.metrics.begin(), r.metrics.end(),
                                   [](const MetricsRow& a, const MetricsRow& b) { return a.val_loss < b.val_loss; });
  EXPECT_EQ(r.best_epoch, it->epoch);
  EXPECT_EQ(r.best_value, it->val_loss);
}

TEST(TrainModel, FrozenSigmaStaysAtInit) {
  ModelConfig c = tiny_config(ModelKind::Fif);
  c.sigma_frozen = true;
  c.sigma_init = 0.2;
  const TrainResult r = train_model(c, load_dataset(c));
  for (const auto& row : r.metrics) EXPECT_EQ(row.sigma, 0.2);
  ModelConfig learn = tiny_config(ModelKind::Fif);
  const TrainResult l = train_model(learn, load_dataset(learn));
  EXPECT_NE(l.metrics.back().sigma, learn.sigma_init);
}

TEST(TrainModel, MetricsCsvLayout) {
  std::ostringstream os;
  write_metrics_csv(os, {{1, 2.5, 3.0, 0.1, 0.0}});
  EXPECT_EQ(os.str(), "epoch,train_loss,val_loss,sigma,seconds\n1,2.5,3,0.10000000000000001,0.000000\n");
}

TEST(TrainModel, DivergenceIsReportedWithContext) {
  ModelConfig c = tiny_config(ModelKind::Vae);
  c.lr = 1e6;
  c.epochs = 20;
  try {
    train_model(c, load_dataset(c));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(TrainModel, ParaboloidRecipeHalvesFiveLoss) {
  ModelConfig c;
  c.model = ModelKind::Five;
  c.dataset = "paraboloid";
  c.data_size = 10000;
  c.hidden_dims = {256, 256};
  c.activation = Activation::SiLU;
  c.lr = 1e-4;
  c.weight_decay = 1e-3;
  c.epochs = 100;
  c.batch_size = 50;
  c.sigma_init = 0.2;
  c.sigma_frozen = true;
  c.val_size = 1000;
  c.test_size = 100;
  const TrainResult r = train_model(c, load_dataset(c));
  const double first = r.metrics.front().train_loss;
  const double last = r.metrics.back().train_loss;
  std::cout << "five paraboloid train loss: epoch 1 " << first << ", epoch 100 " << last << "\n";
  EXPECT_LT(last, 0.5 * first);
}

TEST(LinearFive, ScalarCaseMatchesClosedForm) {
  Rng rng(7);
  const LinearFiveFit fit = fit_linear_five(Matrix::Identity(1, 1), 1, 0.1, 2000000, 0.0, rng);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(std::abs(fit.w(0, 0)), 1.0, 1e-3);
  EXPECT_NEAR(std::abs(fit.v(0, 0)), 1.0 / 1.01, 1e-3);
  EXPECT_GT(fit.w(0, 0) * fit.v(0, 0), 0.0);
}

TEST(LinearFive, ScalarStationaryPointSatisfiesFirstOrderConditions) {
  for (double lambda : {1.0, 4.0}) {
    for (double s2 : {0.01, 1.0}) {
      Rng rng(8);
      const double sigma = std::sqrt(s2);
      const LinearFiveFit fit = fit_linear_five(Matrix::Constant(1, 1, lambda), 1, sigma, 2000000, 0.0, rng);
      ASSERT_TRUE(fit.converged);
      const double w = fit.w(0, 0), v = fit.v(0, 0);
      const double dw = -lambda * (1 - w * v) * v / s2 + w * v * v;
      const double dv = -lambda * (1 - w * v) * w / s2 + w * w * v + lambda * v + s2 * v - w;
      EXPECT_LT(std::abs(dw), 1e-6);
      EXPECT_LT(std::abs(dv), 1e-6);
    }
  }
}

TEST(LinearFive, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Matrix a = standard_normal(3, 3, rng);
  const Matrix cov = a * a.transpose() + Matrix::Identity(3, 3);
  const Matrix w = standard_normal(3, 2, rng), v = standard_normal(3, 2, rng);
  const double sigma = 0.4;
  const LinearFiveGrad g = linear_five_grad(cov, w, v, sigma);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    // W enters the surrogate only through the stop-gradient; hold it fixed there.
    Matrix wp = w, wm = w;
    wp(k) += h;
    wm(k) -= h;
    const double sur = (v.transpose() * w).trace();
    const double fp = linear_five_loss(cov, wp, v, sigma) + (v.transpose() * wp).trace() - sur;
    const double fm = linear_five_loss(cov, wm, v, sigma) + (v.transpose() * wm).trace() - sur;
    EXPECT_NEAR(g.w(k), (fp - fm) / (2 * h), 1e-5 * std::max(1.0, std::abs(g.w(k))));
    Matrix vp = v, vm = v;
    vp(k) += h;
    vm(k) -= h;
    EXPECT_NEAR(g.v(k), (linear_five_loss(cov, w, vp, sigma) - linear_five_loss(cov, w, vm, sigma)) / (2 * h),
                1e-5 * std::max(1.0, std::abs(g.v(k))));
  }
}

TEST(LinearFive, FullRankRecoversCovariance) {
  Rng rng(10);
  const Matrix cov = Eigen::Vector3d(4.0, 2.0, 1.0).asDiagonal();
  const LinearFiveFit fit = fit_linear_five(cov, 3, 0.1, 2000000, 0.0, rng);
  ASSERT_TRUE(fit.converged);
  EXPECT_LT((fit.w * fit.w.transpose() - cov).norm(), 1e-2);
  const LinearOptimumCheck chk = check_linear_optimum(cov, fit.w, fit.v, 0.1);
  EXPECT_LT(chk.rv_sv_dev, 1e-2);
  EXPECT_LT(chk.rotation_gap, 1e-2);
}

TEST(LinearFive, SingleLatentSelectsTopEigenvector) {
  Rng rng(11);
  const Matrix cov = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  const LinearFiveFit fit = fit_linear_five(cov, 1, 0.1, 2000000, 0.0, rng);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.w.squaredNorm(), 4.0, 0.05);
  EXPECT_LT(std::abs(fit.w(1, 0)) / fit.w.norm(), 1e-2);
}

TEST(LinearFive, NonConvergenceIsReported) {
  Rng rng(12);
  const LinearFiveFit fit = fit_linear_five(Matrix::Identity(2, 2), 2, 0.1, 5, 0.0, rng);
  EXPECT_FALSE(fit.converged);
  EXPECT_GT(fit.grad_norm, kLinearFitTolerance);
  EXPECT_EQ(fit.steps, 5);
}

TEST(LinearFive, RejectsBadInputs) {
  Rng rng(13);
  EXPECT_THROW(fit_linear_five(Matrix(Eigen::Vector2d(1.0, -1.0).asDiagonal()), 1, 0.1, 10, 0.0, rng), DomainError);
  EXPECT_THROW(fit_linear_five(Matrix::Identity(2, 2), 3, 0.1, 10, 0.0, rng), DomainError);
  EXPECT_THROW(fit_linear_five(Matrix::Identity(2, 2), 1, 0.0, 10, 0.0, rng), DomainError);
}
