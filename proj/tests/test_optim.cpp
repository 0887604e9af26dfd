#include <gtest/gtest.h>

#include <cstring>

#include "promise/bench/data.hpp"
#include "promise/optim.hpp"
#include "support.hpp"

using namespace promise;
using promise::test::rel_err;

namespace {

const Method kAllMethods[] = {Method::SketchySGD, Method::SketchySVRG, Method::SketchySAGA,
                              Method::SketchyKatyusha, Method::SVRG, Method::SAGA,
                              Method::LKatyusha};

// Ridge data whose Gram A^T A / n has eigenvalues j^(-2 beta), j = 1..p,
// with incoherent (Haar) singular vectors.
std::shared_ptr<const Dataset> decaying_ridge(Index n, Index p, double beta, double noise,
                                              Rng& rng) {
  const Mat U = Eigen::HouseholderQR<Mat>(gaussian_matrix(n, p, rng)).householderQ() * Mat::Identity(n, p);
  const Mat V = Eigen::HouseholderQR<Mat>(gaussian_matrix(p, p, rng)).householderQ() * Mat::Identity(p, p);
  Vec s(p);
  for (Index j = 0; j < p; ++j) {
    s(j) = std::sqrt(static_cast<double>(n)) * std::pow(static_cast<double>(j + 1), -beta);
  }
  Mat A = U * s.asDiagonal() * V.transpose();
  const Vec w = gaussian_vector(p, rng);
  Vec b = A * w + noise * gaussian_vector(n, rng);
  return std::make_shared<const Dataset>(Dataset{DesignMatrix(std::move(A)), std::move(b)});
}

// Dense normal-equation oracle.
double ridge_optimum(const GlmModel& m) {
  const Mat A = m.data().A.to_dense();
  const double n = static_cast<double>(m.n());
  Mat H = A.transpose() * A / n;
  H.diagonal().array() += m.get_reg();
  const Vec w = H.ldlt().solve(A.transpose() * m.data().labels / n);
  return m.full_loss(w);
}

OptimizerConfig make_config(Method method, std::uint64_t seed = 0) {
  OptimizerConfig c;
  c.method = method;
  c.seed = seed;
  c.measure_time = false;
  return c;
}

std::optional<Index> first_epoch_below(const RunResult& r, double tol) {
  for (const auto& rec : r.records)
    if (rec.subopt <= tol) return rec.epoch;
  return std::nullopt;
}

}  // namespace

TEST(LearningRate, SagaRuleExamples) {
  EXPECT_DOUBLE_EQ(learning_rate_saga_rule(1.0, 0.0, 10), 0.5);
  EXPECT_DOUBLE_EQ(learning_rate_saga_rule(1.0, 1.0, 10), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(learning_rate_saga_rule(2.0, 0.05, 10), 0.2);
  EXPECT_THROW(learning_rate_saga_rule(0.0, 0.0, 10), InvalidInput);
}

TEST(LearningRate, UnitRowNormBaselineDefault) {
  Mat A = Mat::Zero(4, 2);
  A << 1, 0, 0, 1, 0.6, 0.8, -1, 0;
  auto data = std::make_shared<const Dataset>(Dataset{DesignMatrix(A), Vec::Ones(4)});
  const double nu = 0.1;
  const GlmModel m(LossKind::Squared, nu, data);
  EXPECT_NEAR(m.average_smoothness(), 1.0, 1e-15);
  OptimizerConfig c = make_config(Method::SAGA);
  c.max_epochs = 1;
  const auto r = run_baseline(m, c);
  EXPECT_DOUBLE_EQ(r.records.back().eta, std::max(1.0 / 3.0, 1.0 / (2.0 * (1.0 + 4 * nu))));
}

TEST(Katyusha, ThetaClampsAtOneHalf) {
  const auto kp = detail::katyusha_params(1.0, 0.5, 2.0 / 3.0, 100, 0.5);
  EXPECT_DOUBLE_EQ(kp.theta1, 0.5);
  EXPECT_NEAR(kp.eta, 2.0 / 3.0, 1e-15);
  const auto small = detail::katyusha_params(1.0, 1e-6, 2.0 / 3.0, 100, 0.5);
  EXPECT_NEAR(small.theta1, std::sqrt(2.0 / 3.0 * 100 * 1e-6), 1e-15);
}

TEST(Config, Validation) {
  Rng rng(1);
  const auto data = promise::test::random_dataset(10, 3, false, rng);
  const GlmModel m(LossKind::Squared, 0.1, data);
  auto c = make_config(Method::SketchySAGA);
  c.b_g = 11;
  EXPECT_THROW(resolve(m, c), ConfigError);
  c = make_config(Method::SketchySAGA);
  c.b_h = 0;
  EXPECT_THROW(resolve(m, c), ConfigError);
  c = make_config(Method::SketchySGD);
  c.alpha = -1.0;
  EXPECT_THROW(resolve(m, c), ConfigError);
  c = make_config(Method::SketchyKatyusha);
  c.eta = 0.1;
  EXPECT_THROW(resolve(m, c), ConfigError);

  const GlmModel unregularized(LossKind::Squared, 0.0, data);
  EXPECT_THROW(resolve(unregularized, make_config(Method::LKatyusha)), ConfigError);
  auto k = make_config(Method::SketchyKatyusha);
  k.mu = 0.01;
  EXPECT_NO_THROW(resolve(unregularized, k));

  const auto rc = resolve(m, make_config(Method::SketchySVRG));
  EXPECT_EQ(rc.b_g, 10);
  EXPECT_EQ(rc.b_h, 3);
  EXPECT_EQ(rc.epoch_len, 1);
  EXPECT_EQ(rc.m, 1);
  EXPECT_FALSE(rc.schedule.every.has_value());
  EXPECT_DOUBLE_EQ(rc.pi, 1.0);
  EXPECT_DOUBLE_EQ(rc.mu, 0.1);
  EXPECT_DOUBLE_EQ(rc.theta2, 0.5);

  const auto logit = promise::test::random_dataset(600, 3, true, rng);
  const auto rl = resolve(GlmModel(LossKind::Logistic, 0.1, logit), make_config(Method::SketchySGD));
  EXPECT_EQ(rl.b_g, 256);
  EXPECT_EQ(rl.b_h, 24);
  EXPECT_EQ(rl.epoch_len, 3);
  ASSERT_TRUE(rl.schedule.every.has_value());
  EXPECT_EQ(*rl.schedule.every, 3);
  EXPECT_DOUBLE_EQ(*rl.alpha, 0.5);
}

TEST(VarianceReduction, SnapshotIdentity) {
  Rng rng(2);
  const auto data = promise::test::random_dataset(20, 4, true, rng);
  const GlmModel m(LossKind::Logistic, 0.1, data);
  const Vec w = gaussian_vector(4, rng);
  const Vec g_bar = m.get_full_grad(w);
  EXPECT_EQ(variance_reduced_gradient(m, {1, 5, 7}, w, w, g_bar), g_bar);
}

TEST(VarianceReduction, UnbiasedOverAllBatches) {
  Rng rng(3);
  for (auto loss : {LossKind::Squared, LossKind::Logistic}) {
    const auto data = promise::test::random_dataset(8, 4, loss == LossKind::Logistic, rng);
    const GlmModel m(loss, 0.05, data);
    const Vec w = gaussian_vector(4, rng);
    const Vec anchor = gaussian_vector(4, rng);
    const Vec g_bar = m.get_full_grad(anchor);
    Vec acc = Vec::Zero(4);
    int count = 0;
    for (Index i = 0; i < 8; ++i)
      for (Index j = i + 1; j < 8; ++j)
        for (Index k = j + 1; k < 8; ++k) {
          acc += variance_reduced_gradient(m, {i, j, k}, w, anchor, g_bar);
          ++count;
        }
    EXPECT_EQ(count, 56);
    EXPECT_LE((acc / count - m.get_full_grad(w)).norm(), 1e-12);
  }
}

TEST(SagaTable, FirstStepIsMinibatchGradient) {
  Rng rng(4);
  const auto data = promise::test::random_dataset(12, 5, true, rng);
  const GlmModel m(LossKind::Logistic, 0.2, data);
  SagaTable t(m);
  const Vec w = gaussian_vector(5, rng);
  const Batch b{0, 4, 9};
  EXPECT_LE(rel_err(t.step(b, w), m.get_stoch_grad(b, w)), 1e-14);
}

TEST(SagaTable, CompleteAfterTouchingEveryIndex) {
  Rng rng(5);
  const auto data = promise::test::random_dataset(12, 5, false, rng);
  const GlmModel m(LossKind::Squared, 0.2, data);
  SagaTable t(m);
  const Vec w = gaussian_vector(5, rng);
  for (Index i = 0; i < 12; i += 3) t.step({i, i + 1, i + 2}, w);
  EXPECT_LE((t.average() + m.get_reg() * w - m.get_full_grad(w)).norm(), 1e-10);
}

TEST(SagaTable, AverageMatchesRecomputationAlongARun) {
  Rng rng(6);
  const auto data = promise::test::random_dataset(50, 6, true, rng);
  const GlmModel m(LossKind::Logistic, 0.01, data);
  SagaTable t(m);
  BatchSampler sampler(50);
  Vec w = Vec::Zero(6);
  for (int k = 0; k < 200; ++k) {
    const Vec g = t.step(sampler.draw(7, rng), w);
    w -= 0.5 * g;
    if (k % 7 == 6) {
      EXPECT_LE(rel_err(t.average(), t.recompute_average()), 1e-8);
    }
  }
}

TEST(Optimizers, SingleSgdStepIsNewtonOnOneSample) {
  Mat A(1, 1);
  A << 2.0;
  auto data = std::make_shared<const Dataset>(Dataset{DesignMatrix(A), Vec::Constant(1, 3.0)});
  const double nu = 0.5;
  const GlmModel m(LossKind::Squared, nu, data);
  auto c = make_config(Method::SketchySGD);
  c.b_g = 1;
  c.b_h = 1;
  c.alpha = 1.0;
  c.max_epochs = 1;
  c.precond = PrecondConfig::defaults(PrecondKind::SSN);
  c.precond.rho = nu;
  const auto r = run(m, c);
  EXPECT_NEAR(r.w(0), 2.0 * 3.0 / (4.0 + nu), 1e-12);
}

TEST(Optimizers, StationaryStartStaysFixed) {
  Rng rng(7);
  Mat A = gaussian_matrix(30, 4, rng);
  auto data = std::make_shared<const Dataset>(Dataset{DesignMatrix(A), Vec::Zero(30)});
  const GlmModel m(LossKind::Squared, 1e-3, data);
  for (auto method : kAllMethods) {
    auto c = make_config(method);
    c.b_g = 8;
    c.max_epochs = 3;
    const auto r = run(m, c);
    EXPECT_EQ(r.w, Vec::Zero(4)) << to_string(method);
    EXPECT_FALSE(r.diverged);
  }
}

TEST(Optimizers, SvrgWithExactHessianTakesDampedNewtonStep) {
  Rng rng(8);
  for (auto loss : {LossKind::Squared, LossKind::Logistic}) {
    const auto data = promise::test::random_dataset(40, 6, loss == LossKind::Logistic, rng);
    const double nu = 1e-2;
    const GlmModel m(loss, nu, data);
    auto c = make_config(Method::SketchySVRG);
    c.precond = PrecondConfig::defaults(PrecondKind::SSN);
    c.precond.rho = nu;
    c.b_h = 40;
    c.b_g = 40;
    c.m = 1;
    c.max_epochs = 1;
    const auto r = run(m, c);
    const Vec w0 = Vec::Zero(6);
    const double eta = r.records.back().eta;
    const Vec expected = w0 - eta * m.full_hessian(w0).ldlt().solve(m.get_full_grad(w0));
    EXPECT_LE(rel_err(r.w, expected), 1e-10) << to_string(loss);
    EXPECT_NEAR(r.records.back().lambda_p, 1.0, 2e-3);
  }
}

TEST(Optimizers, PassAccounting) {
  Rng rng(9);
  const auto data = promise::test::random_dataset(10, 3, false, rng);
  const GlmModel m(LossKind::Squared, 1e-3, data);
  auto base = make_config(Method::SketchySAGA);
  base.b_g = 5;
  base.b_h = 3;
  base.max_epochs = 2;

  auto passes = [&](Method method) {
    auto c = base;
    c.method = method;
    std::vector<double> out;
    for (const auto& rec : run(m, c).records) out.push_back(rec.passes);
    return out;
  };
  auto expect = [](const std::vector<double>& got, std::vector<double> want, Method method) {
    ASSERT_EQ(got.size(), want.size()) << to_string(method);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << to_string(method);
  };
  // Two steps of b_g = 5 per epoch, one preconditioner update (two batches of 3).
  expect(passes(Method::SketchySGD), {0.0, 1.6, 2.6}, Method::SketchySGD);
  expect(passes(Method::SketchySAGA), {0.0, 1.6, 2.6}, Method::SketchySAGA);
  expect(passes(Method::SketchySVRG), {0.0, 2.6, 4.6}, Method::SketchySVRG);
  expect(passes(Method::SAGA), {0.0, 1.0, 2.0}, Method::SAGA);
  expect(passes(Method::SVRG), {0.0, 2.0, 4.0}, Method::SVRG);

  // Katyusha: one initial full gradient plus one per snapshot refresh.
  for (auto method : {Method::SketchyKatyusha, Method::LKatyusha}) {
    auto c = base;
    c.method = method;
    c.pi = 1.0;
    const auto r = run(m, c);
    const double update = method == Method::SketchyKatyusha ? 0.6 : 0.0;
    EXPECT_NEAR(r.records[1].passes, 1.0 + update + 2 * (1.0 + 0.5), 1e-12);
    EXPECT_NEAR(r.records[2].passes, 1.0 + update + 4 * (1.0 + 0.5), 1e-12);
  }
}

TEST(Optimizers, RecordsAreWellFormed) {
  Rng rng(10);
  const auto data = promise::test::random_dataset(100, 5, true, rng);
  const GlmModel m(LossKind::Logistic, 1e-3, data);
  for (auto method : kAllMethods) {
    auto c = make_config(method);
    c.b_g = 16;
    c.max_epochs = 4;
    c.f_star = 0.0;
    std::vector<RunRecord> seen;
    const auto r = run(m, c, [&](const RunRecord& rec) { seen.push_back(rec); });
    ASSERT_EQ(r.records.size(), 5u) << to_string(method);
    ASSERT_EQ(seen.size(), 5u);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      EXPECT_EQ(r.records[i].epoch, static_cast<Index>(i));
      EXPECT_DOUBLE_EQ(r.records[i].subopt, r.records[i].loss);
      EXPECT_EQ(r.records[i].seconds, 0.0);
      if (i > 0) {
        EXPECT_GE(r.records[i].passes, r.records[i - 1].passes);
      }
    }
    EXPECT_NEAR(r.records[0].loss, std::log(2.0), 1e-15);
    if (is_preconditioned(method)) {
      EXPECT_TRUE(std::isnan(r.records[0].lambda_p));
      EXPECT_GT(r.records[1].lambda_p, 0.0);
    } else {
      EXPECT_TRUE(std::isnan(r.records[1].lambda_p));
      EXPECT_GT(r.records[0].eta, 0.0);
    }
  }
}

TEST(Optimizers, ObserverSeesEveryStep) {
  Rng rng(11);
  const auto data = promise::test::random_dataset(64, 4, true, rng);
  const GlmModel m(LossKind::Logistic, 1e-3, data);
  auto c = make_config(Method::SketchySAGA);
  c.b_g = 16;
  c.max_epochs = 3;
  std::vector<Index> steps;
  std::vector<Index> refreshes;
  run(m, c, {}, [&](Index k, const Vec&, bool refreshed) {
    steps.push_back(k);
    if (refreshed) refreshes.push_back(k);
  });
  ASSERT_EQ(steps.size(), 12u);
  for (std::size_t i = 0; i < steps.size(); ++i) EXPECT_EQ(steps[i], static_cast<Index>(i));
  EXPECT_EQ(refreshes, (std::vector<Index>{0, 4, 8}));
}

TEST(Optimizers, Deterministic) {
  Rng rng(12);
  const auto data = promise::test::random_dataset(120, 8, true, rng);
  const GlmModel m(LossKind::Logistic, 1e-3, data);
  for (auto method : kAllMethods) {
    auto c = make_config(method, 42);
    c.b_g = 16;
    c.max_epochs = 3;
    const auto a = run(m, c);
    const auto b = run(m, c);
    ASSERT_EQ(a.w.size(), b.w.size());
    EXPECT_EQ(std::memcmp(a.w.data(), b.w.data(), sizeof(double) * a.w.size()), 0)
        << to_string(method);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].loss, b.records[i].loss);
      EXPECT_EQ(a.records[i].passes, b.records[i].passes);
    }
    c.seed = 43;
    EXPECT_NE(run(m, c).w, a.w) << to_string(method);
  }
}

TEST(Optimizers, DivergenceIsDetected) {
  Rng rng(13);
  const auto data = promise::test::random_dataset(50, 5, false, rng);
  const GlmModel m(LossKind::Squared, 1e-3, data);
  for (auto method : {Method::SAGA, Method::SketchySGD}) {
    auto c = make_config(method);
    c.eta = 1e3;
    c.b_g = 10;
    c.max_epochs = 50;
    const auto r = run(m, c);
    EXPECT_TRUE(r.diverged) << to_string(method);
    EXPECT_LT(r.records.size(), 51u);
  }
}

// ---------------------------------------------------------------------------
// Convergence on the synthetic ridge instance (n = 400, p = 30, singular
// values j^-1, nu = 1e-2 / n, NySSN defaults).

class RidgeConvergence : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    Rng rng(0);
    data_ = std::make_shared<const Dataset>(bench::synthetic_ridge(400, 30, 1.0, 0.1, rng).data);
    model_ = std::make_unique<GlmModel>(LossKind::Squared, 1e-2 / 400, data_);
    f_star_ = ridge_optimum(*model_);
  }
  static void TearDownTestSuite() { model_.reset(); }

  static RunResult run_method(Method method, Index epochs, SvrgOption opt = SvrgOption::I) {
    auto c = make_config(method, 0);
    c.b_g = 32;
    c.max_epochs = epochs;
    c.f_star = f_star_;
    c.svrg_option = opt;
    return run(*model_, c);
  }

  static inline std::shared_ptr<const Dataset> data_;
  static inline std::unique_ptr<GlmModel> model_;
  static inline double f_star_ = 0.0;
};

TEST_F(RidgeConvergence, SketchySvrgConvergesLinearly) {
  const auto r = run_method(Method::SketchySVRG, 40);
  ASSERT_FALSE(r.diverged);
  const auto solved = first_epoch_below(r, 1e-8);
  ASSERT_TRUE(solved.has_value()) << "final subopt " << r.records.back().subopt;

  // Least-squares fit of log10(subopt) against epoch over epochs 2..40.
  std::vector<double> xs, ys;
  for (const auto& rec : r.records)
    if (rec.epoch >= 2 && rec.subopt > 0.0) {
      xs.push_back(static_cast<double>(rec.epoch));
      ys.push_back(std::log10(rec.subopt));
    }
  ASSERT_GE(xs.size(), 3u);
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double cov = sxy - sx * sy / n;
  const double vx = sxx - sx * sx / n;
  const double vy = syy - sy * sy / n;
  const double slope = cov / vx;
  const double r2 = cov * cov / (vx * vy);
  EXPECT_LT(slope, 0.0);
  EXPECT_GE(r2, 0.95) << "slope " << slope;
}

TEST_F(RidgeConvergence, SketchySvrgOptionTwoConverges) {
  const auto r = run_method(Method::SketchySVRG, 60, SvrgOption::II);
  EXPECT_TRUE(first_epoch_below(r, 1e-6).has_value()) << r.records.back().subopt;
}

TEST_F(RidgeConvergence, SketchySagaConvergesMonotonically) {
  const auto r = run_method(Method::SketchySAGA, 60);
  ASSERT_FALSE(r.diverged);
  EXPECT_TRUE(first_epoch_below(r, 1e-8).has_value()) << r.records.back().subopt;
  for (std::size_t i = 6; i < r.records.size(); ++i)
    EXPECT_LE(r.records[i].subopt, r.records[i - 1].subopt + 1e-12) << "epoch " << i;
}

TEST_F(RidgeConvergence, SketchyKatyushaAtLeastTiesSvrg) {
  const auto svrg = first_epoch_below(run_method(Method::SketchySVRG, 40), 1e-8);
  const auto kat = first_epoch_below(run_method(Method::SketchyKatyusha, 40), 1e-8);
  ASSERT_TRUE(svrg.has_value());
  ASSERT_TRUE(kat.has_value());
  EXPECT_LE(*kat, *svrg);
}

TEST(Optimizers, SketchySgdReachesNoiseFloor) {
  Rng rng(0);
  const auto data = decaying_ridge(500, 20, 1.0, 0.1, rng);
  const GlmModel m(LossKind::Squared, 1e-2 / 500, data);
  auto c = make_config(Method::SketchySGD, 0);
  c.b_g = 32;
  c.max_epochs = 200;
  c.f_star = ridge_optimum(m);
  const auto r = run(m, c);
  ASSERT_FALSE(r.diverged);
  std::vector<double> tail;
  for (std::size_t i = 150; i < r.records.size(); ++i) tail.push_back(r.records[i].subopt);
  std::sort(tail.begin(), tail.end());
  const double floor = tail[tail.size() / 2];
  EXPECT_LE(r.records[30].subopt, 10.0 * floor) << "floor " << floor;
}

TEST(Optimizers, BaselineSagaOnWellConditionedRidge) {
  Rng rng(0);
  const auto data = decaying_ridge(300, 10, 0.25, 0.1, rng);
  const GlmModel m(LossKind::Squared, 1e-3, data);
  auto c = make_config(Method::SAGA, 0);
  c.b_g = 16;
  c.max_epochs = 100;
  c.f_star = ridge_optimum(m);
  const auto r = run(m, c);
  EXPECT_TRUE(first_epoch_below(r, 1e-6).has_value()) << r.records.back().subopt;
}

TEST(Optimizers, LogisticRunsConverge) {
  Rng rng(14);
  const auto data = promise::test::random_dataset(300, 10, true, rng);
  const GlmModel m(LossKind::Logistic, 1e-3, data);
  // Newton oracle for F*.
  Vec w = Vec::Zero(10);
  for (int it = 0; it < 50; ++it) w -= m.full_hessian(w).ldlt().solve(m.get_full_grad(w));
  const double f_star = m.full_loss(w);
  for (auto method : {Method::SketchySVRG, Method::SketchySAGA, Method::SketchyKatyusha}) {
    auto c = make_config(method, 1);
    c.b_g = 32;
    c.max_epochs = 30;
    c.f_star = f_star;
    const auto r = run(m, c);
    EXPECT_LE(r.records.back().subopt, 1e-8) << to_string(method);
  }
}
