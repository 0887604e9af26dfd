#pragma once

// Dataset preparation for the benchmark harness: label handling, train/test
// splits, preprocessing, random features, synthetic instances, and reference
// minima.

#include <algorithm>
#include <numbers>
#include <set>
#include <string>

#include <Eigen/Cholesky>

#include "promise/glm.hpp"

namespace promise::bench {

// ---------------------------------------------------------------------------
// Labels and splits

/// Maps a two-valued label vector to {-1, +1}, the larger value becoming +1.
inline Dataset binarize_labels(Dataset ds) {
  std::set<double> values(ds.labels.data(), ds.labels.data() + ds.labels.size());
  if (values.size() > 2) throw InvalidInput("logistic task needs at most two distinct labels");
  if (values == std::set<double>{-1.0, 1.0} || values == std::set<double>{1.0} ||
      values == std::set<double>{-1.0})
    return ds;
  const double hi = *values.rbegin();
  for (Index i = 0; i < ds.labels.size(); ++i) ds.labels(i) = ds.labels(i) == hi ? 1.0 : -1.0;
  return ds;
}

struct Split {
  Dataset train;
  Dataset test;
};

/// Random split with round(holdout * n) test rows.
inline Split train_test_split(const Dataset& ds, double holdout, Rng& rng) {
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must lie in [0, 1)");
  const Index n = ds.n();
  const auto n_test = static_cast<Index>(std::llround(holdout * static_cast<double>(n)));
  if (n_test == 0) return {ds, Dataset{DesignMatrix(Mat(0, ds.p())), Vec(0)}};
  Batch perm = full_batch(n);
  std::shuffle(perm.begin(), perm.end(), rng);
  Batch test(perm.begin(), perm.begin() + n_test);
  Batch train(perm.begin() + n_test, perm.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  auto take = [&](const Batch& idx) {
    Vec b(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) b(static_cast<Index>(k)) = ds.labels(idx[k]);
    return Dataset{ds.A.select_rows(idx), std::move(b)};
  };
  return {take(train), take(test)};
}

// ---------------------------------------------------------------------------
// Preprocessing

enum class Preprocessing { None, UnitRowNorm, Standardize };

inline Preprocessing parse_preprocessing(const std::string& s) {
  if (s == "none") return Preprocessing::None;
  if (s == "unit_row_norm") return Preprocessing::UnitRowNorm;
  if (s == "standardize") return Preprocessing::Standardize;
  throw ConfigError("unknown preprocessing '" + s + "'");
}

inline bool labels_are_binary(const Vec& b) {
  std::set<double> values(b.data(), b.data() + b.size());
  return values.size() <= 2;
}

/// unit_row_norm scales each nonzero row to unit length and keeps storage.
/// standardize centers and scales each column (constant columns are only
/// centered), densifying sparse input, and standardizes non-binary labels.
inline Dataset preprocess(Dataset ds, Preprocessing mode) {
  switch (mode) {
    case Preprocessing::None:
      return ds;
    case Preprocessing::UnitRowNorm: {
      Vec scale = ds.A.row_squared_norms().cwiseSqrt();
      for (Index i = 0; i < scale.size(); ++i) scale(i) = scale(i) > 0.0 ? 1.0 / scale(i) : 1.0;
      ds.A = ds.A.scale_rows(scale);
      return ds;
    }
    case Preprocessing::Standardize: {
      Mat a = ds.A.to_dense();
      const double n = static_cast<double>(a.rows());
      if (a.rows() > 0) {
        const Eigen::RowVectorXd mean = a.colwise().mean();
        a.rowwise() -= mean;
        for (Index j = 0; j < a.cols(); ++j) {
          const double sd = std::sqrt(a.col(j).squaredNorm() / n);
          if (sd > 0.0) a.col(j) /= sd;
        }
      }
      ds.A = DesignMatrix(std::move(a));
      if (ds.labels.size() > 0 && !labels_are_binary(ds.labels)) {
        const double mean = ds.labels.mean();
        ds.labels.array() -= mean;
        const double sd = std::sqrt(ds.labels.squaredNorm() / n);
        if (sd > 0.0) ds.labels /= sd;
      }
      return ds;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Random features

struct RandomFeatureSpec {
  enum class Kind { None, Gaussian, Relu };
  Kind kind = Kind::None;
  Index D = 0;
  double bandwidth = 1.0;
};

/// Random feature map with explicit weights: W is D x p, c has length D
/// (ignored for ReLU features).
struct RandomFeatureMap {
  RandomFeatureSpec::Kind kind = RandomFeatureSpec::Kind::Gaussian;
  Mat W;
  Vec c;

  Mat apply(const DesignMatrix& X) const {
    if (X.cols() != W.cols()) throw InvalidInput("random features: dimension mismatch");
    const double D = static_cast<double>(W.rows());
    Mat proj = X.visit([&](const auto& m) -> Mat { return m * W.transpose(); });
    if (kind == RandomFeatureSpec::Kind::Gaussian) {
      proj.rowwise() += c.transpose();
      return std::sqrt(2.0 / D) * proj.array().cos().matrix();
    }
    return std::sqrt(2.0 / D) * proj.cwiseMax(0.0);
  }
};

/// gaussian(D, sigma): z = sqrt(2/D) cos(W x + c), W_ij ~ N(0, 1/sigma^2),
///   c_j ~ U[0, 2 pi).
/// relu(D): z = sqrt(2/D) max(0, W x), W_ij ~ N(0, 1/p).
inline RandomFeatureMap draw_random_features(const RandomFeatureSpec& spec, Index p, Rng& rng) {
  if (spec.D < 1) throw ConfigError("random features: D must be at least 1");
  RandomFeatureMap map;
  map.kind = spec.kind;
  if (spec.kind == RandomFeatureSpec::Kind::Gaussian) {
    if (!(spec.bandwidth > 0.0)) throw ConfigError("random features: bandwidth must be positive");
    map.W = gaussian_matrix(spec.D, p, rng) / spec.bandwidth;
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    map.c.resize(spec.D);
    for (Index j = 0; j < spec.D; ++j) map.c(j) = phase(rng);
  } else if (spec.kind == RandomFeatureSpec::Kind::Relu) {
    map.W = gaussian_matrix(spec.D, p, rng) / std::sqrt(static_cast<double>(p));
    map.c = Vec::Zero(spec.D);
  } else {
    throw ConfigError("random features: no feature kind selected");
  }
  return map;
}

inline Dataset random_features(const Dataset& ds, const RandomFeatureSpec& spec, Rng& rng) {
  if (spec.kind == RandomFeatureSpec::Kind::None) return ds;
  const auto map = draw_random_features(spec, ds.p(), rng);
  return Dataset{DesignMatrix(map.apply(ds.A)), ds.labels};
}

// ---------------------------------------------------------------------------
// Synthetic instances

struct SyntheticInstance {
  Dataset data;
  Vec w_planted;
};

/// Ridge instance A = U diag(scale j^-beta) V^T with Haar U (n x p) and
/// V (p x p), labels b = A w + noise * eps with w ~ N(0, I/p).
inline SyntheticInstance synthetic_ridge(Index n, Index p, double beta, double noise, Rng& rng,
                                         double scale = 1.0) {
  if (n < p || p < 1) throw ConfigError("synthetic ridge: need n >= p >= 1");
  const Mat U = Eigen::HouseholderQR<Mat>(gaussian_matrix(n, p, rng)).householderQ() * Mat::Identity(n, p);
  const Mat V = Eigen::HouseholderQR<Mat>(gaussian_matrix(p, p, rng)).householderQ() * Mat::Identity(p, p);
  Vec s(p);
  for (Index j = 0; j < p; ++j) s(j) = scale * std::pow(static_cast<double>(j + 1), -beta);
  Mat A = U * s.asDiagonal() * V.transpose();
  Vec w = gaussian_vector(p, rng) / std::sqrt(static_cast<double>(p));
  Vec b = A * w + noise * gaussian_vector(n, rng);
  return {Dataset{DesignMatrix(std::move(A)), std::move(b)}, std::move(w)};
}

/// Logistic instance with Gaussian rows a_i ~ N(0, I/p) and labels drawn from
/// the logistic model at a planted w ~ N(0, scale^2 I).
inline SyntheticInstance synthetic_logistic(Index n, Index p, double scale, Rng& rng) {
  if (n < 1 || p < 1) throw ConfigError("synthetic logistic: need n, p >= 1");
  Mat A = gaussian_matrix(n, p, rng) / std::sqrt(static_cast<double>(p));
  Vec w = scale * gaussian_vector(p, rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec b(n);
  const Vec t = A * w;
  for (Index i = 0; i < n; ++i) b(i) = unif(rng) < promise::detail::sigmoid(t(i)) ? 1.0 : -1.0;
  return {Dataset{DesignMatrix(std::move(A)), std::move(b)}, std::move(w)};
}

// ---------------------------------------------------------------------------
// Reference minima

struct ReferenceSolution {
  Vec w;
  double f = 0.0;
  std::string method;
  double grad_norm = 0.0;
};

/// Ridge: dense solve of (A^T A / n + nu I) w = A^T b / n with up to two
/// refinement steps. Logistic: damped Newton with the exact Hessian.
/// Both stop at |grad F(w)| <= 1e-10 max(1, |grad F(0)|).
inline ReferenceSolution reference_minimum(const GlmModel& model) {
  const Index p = model.p();
  if (p > 2000) throw InvalidInput("reference_minimum: capped at p <= 2000");
  const Vec zero = Vec::Zero(p);
  const double target = 1e-10 * std::max(1.0, model.get_full_grad(zero).norm());
  ReferenceSolution ref;
  Vec w = zero;
  if (model.loss() == LossKind::Squared) {
    ref.method = "dense_solve";
    Eigen::LDLT<Mat> ldlt(model.full_hessian(zero));
    if (ldlt.info() != Eigen::Success) throw NumericalError("reference_minimum: singular system");
    for (int it = 0; it < 3; ++it) {
      const Vec g = model.get_full_grad(w);
      if (g.norm() <= target) break;
      w -= ldlt.solve(g);
    }
  } else {
    ref.method = "newton";
    bool done = false;
    for (int it = 0; it < 200; ++it) {
      const Vec g = model.get_full_grad(w);
      if (g.norm() <= target) {
        done = true;
        break;
      }
      Eigen::LLT<Mat> llt(model.full_hessian(w));
      if (llt.info() != Eigen::Success) throw NumericalError("reference_minimum: Hessian not PD");
      const Vec step = llt.solve(g);
      const double f0 = model.full_loss(w);
      const double slope = g.dot(step);
      double t = 1.0;
      const double slack = 16.0 * std::numeric_limits<double>::epsilon() * std::abs(f0);
      while (t > 1e-12 && model.full_loss(w - t * step) > f0 - 1e-4 * t * slope + slack) t *= 0.5;
      w -= t * step;
    }
    if (!done && model.get_full_grad(w).norm() > target)
      throw NumericalError("reference_minimum: Newton did not converge in 200 iterations");
  }
  ref.grad_norm = model.get_full_grad(w).norm();
  if (ref.grad_norm > target)
    throw NumericalError("reference_minimum: residual gradient above tolerance");
  ref.f = model.full_loss(w);
  ref.w = std::move(w);
  return ref;
}

}  // namespace promise::bench
