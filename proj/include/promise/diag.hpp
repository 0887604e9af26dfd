#pragma once

// Dense spectral and regularity diagnostics: ridge leverage scores, effective
// dimension, coherence, Hessian dissimilarity, local quadratic regularity and
// the spectral-approximation quality of a preconditioner. Intended for
// desk-scale instances; each entry point enforces its own size cap.

#include <algorithm>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "promise/glm.hpp"
#include "promise/optim.hpp"
#include "promise/precond.hpp"

namespace promise {

/// Thin SVD of A, the common input of the leverage-score diagnostics.
struct ThinSpectrum {
  Vec sigma;  // descending
  Mat U;      // n x min(n, p)
  Index n = 0;
  Index p = 0;
};

inline ThinSpectrum thin_spectrum(const Mat& A) {
  if (A.rows() > 2000 || A.cols() > 2000)
    throw InvalidInput("spectral diagnostics are capped at n, p <= 2000");
  if (!A.allFinite()) throw InvalidInput("spectral diagnostics: non-finite matrix");
  Eigen::BDCSVD<Mat> svd(A, Eigen::ComputeThinU);
  return {svd.singularValues(), svd.matrixU(), A.rows(), A.cols()};
}

namespace detail {

// sigma^2 / (sigma^2 + n nu), with the pseudoinverse convention for nu = 0.
inline Vec ridge_filter(const ThinSpectrum& s, double nu) {
  if (!(nu >= 0.0)) throw InvalidInput("regularization must be non-negative");
  const double shift = static_cast<double>(s.n) * nu;
  const double smax = s.sigma.size() > 0 ? s.sigma(0) : 0.0;
  const double cutoff =
      smax * static_cast<double>(std::max(s.n, s.p)) * std::numeric_limits<double>::epsilon();
  Vec f(s.sigma.size());
  for (Index j = 0; j < f.size(); ++j) {
    const double sj = s.sigma(j);
    if (shift == 0.0) {
      f(j) = sj > cutoff ? 1.0 : 0.0;
    } else {
      f(j) = sj * sj / (sj * sj + shift);
    }
  }
  return f;
}

}  // namespace detail

inline Vec ridge_leverage_scores(const ThinSpectrum& s, double nu) {
  const Vec f = detail::ridge_filter(s, nu);
  return s.U.array().square().matrix() * f;
}

/// l_i = a_i^T (A^T A + n nu I)^+ a_i
inline Vec ridge_leverage_scores(const Mat& A, double nu) {
  return ridge_leverage_scores(thin_spectrum(A), nu);
}

inline double effective_dimension(const ThinSpectrum& s, double nu) {
  return detail::ridge_filter(s, nu).sum();
}

/// d_eff = sum_j lambda_j(A^T A) / (lambda_j(A^T A) + n nu)
inline double effective_dimension(const Mat& A, double nu) {
  return effective_dimension(thin_spectrum(A), nu);
}

inline double ridge_leverage_coherence(const ThinSpectrum& s, double nu) {
  const double deff = effective_dimension(s, nu);
  if (!(deff > 0.0)) throw InvalidInput("coherence is undefined for a zero matrix");
  return static_cast<double>(s.n) * ridge_leverage_scores(s, nu).maxCoeff() / deff;
}

/// chi = (n / d_eff) max_i l_i
inline double ridge_leverage_coherence(const Mat& A, double nu) {
  return ridge_leverage_coherence(thin_spectrum(A), nu);
}

struct SpectrumReport {
  Vec singular_values;
  std::vector<double> nu_grid;
  std::vector<double> effective_dimensions;
  double nu = 0.0;
  Vec leverage_scores;
  double coherence = 0.0;
};

/// Singular values, d_eff over nu_grid, and leverage scores and coherence at nu.
inline SpectrumReport spectrum_report(const Mat& A, double nu, std::vector<double> nu_grid) {
  const ThinSpectrum s = thin_spectrum(A);
  SpectrumReport r;
  r.singular_values = s.sigma;
  r.nu_grid = std::move(nu_grid);
  for (double v : r.nu_grid) r.effective_dimensions.push_back(effective_dimension(s, v));
  r.nu = nu;
  r.leverage_scores = ridge_leverage_scores(s, nu);
  r.coherence = ridge_leverage_coherence(s, nu);
  return r;
}

namespace detail {

// Largest eigenvalue of diag(d) + c u u^T (c >= 0) by bisection on the
// secular equation 1 = c sum_j u_j^2 / (x - d_j) for x > max(d).
inline double top_eigenvalue_rank_one_update(const Vec& d, double c, const Vec& u) {
  const double dmax = d.maxCoeff();
  const double mass = c * u.squaredNorm();
  if (mass == 0.0) return dmax;
  auto secular = [&](double x) {
    double s = 0.0;
    for (Index j = 0; j < d.size(); ++j) s += u(j) * u(j) / (x - d(j));
    return 1.0 - c * s;
  };
  double lo = dmax;
  double hi = dmax + mass;
  const double start = std::nextafter(lo, hi);
  if (start < hi && secular(start) >= 0.0) return dmax;
  for (int it = 0; it < 200 && hi - lo > 4.0 * spacing(hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (secular(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace detail

/// max over grid points w and samples i of
/// lambda_1((H + nu I)^{-1/2} (H_i + nu I) (H + nu I)^{-1/2}), where H is the
/// data Hessian of F and H_i = phi_i'' a_i a_i^T.
inline double hessian_dissimilarity(const GlmModel& model, const std::vector<Vec>& w_grid) {
  if (model.p() > 200 || model.n() > 2000)
    throw InvalidInput("hessian_dissimilarity: capped at p <= 200, n <= 2000");
  if (w_grid.empty()) throw InvalidInput("hessian_dissimilarity: empty grid");
  const double nu = model.get_reg();
  const Mat A = model.data().A.to_dense();
  const Batch all = full_batch(model.n());
  double tau = 0.0;
  for (const Vec& w : w_grid) {
    Eigen::SelfAdjointEigenSolver<Mat> es(model.full_hessian(w));
    const Vec lam = es.eigenvalues();
    if (!(lam.minCoeff() > 0.0))
      throw NumericalError("hessian_dissimilarity: regularized Hessian is singular");
    const Vec d = (nu / lam.array()).matrix();
    const Mat proj = lam.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    const Vec curv = model.get_hessian_diagonal(all, w);
    for (Index i = 0; i < model.n(); ++i) {
      const Vec u = proj * A.row(i).transpose();
      tau = std::max(tau, detail::top_eigenvalue_rank_one_update(d, curv(i), u));
    }
  }
  return tau;
}

/// Nodes and weights of the order-k Gauss-Legendre rule on [0, 1].
inline std::pair<Vec, Vec> gauss_legendre(int order) {
  if (order < 1) throw InvalidInput("gauss_legendre: order must be positive");
  Vec x(order), wt(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= order; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      dp = order * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    x(i) = 0.5 * (1.0 - z);
    x(order - 1 - i) = 0.5 * (1.0 + z);
    wt(i) = 0.5 * w;
    wt(order - 1 - i) = 0.5 * w;
  }
  return {x, wt};
}

/// At most `cap` points of the segment, evenly spaced and keeping both ends.
inline std::vector<Vec> subsample_segment(const std::vector<Vec>& segment, std::size_t cap = 64) {
  if (segment.size() <= cap || cap < 2) return segment;
  std::vector<Vec> out;
  out.reserve(cap);
  const double step = static_cast<double>(segment.size() - 1) / static_cast<double>(cap - 1);
  for (std::size_t i = 0; i < cap; ++i)
    out.push_back(segment[static_cast<std::size_t>(std::lround(step * static_cast<double>(i)))]);
  return out;
}

/// Local quadratic regularity ratio gamma_u / gamma_l over a trajectory
/// segment, with
///   gamma(w) = int_0^1 2 (1 - t) |w* - w|^2_{H(w + t (w* - w))} dt / |w* - w|^2_{H(w_j)}.
/// Points equal to w* are skipped.
inline double local_qr_ratio(const GlmModel& model, const Vec& w_j, const std::vector<Vec>& segment,
                             const Vec& w_star, int order = 16) {
  if (model.p() > 200) throw InvalidInput("local_qr_ratio: capped at p <= 200");
  const auto [nodes, weights] = gauss_legendre(order);
  double gmax = -std::numeric_limits<double>::infinity();
  double gmin = std::numeric_limits<double>::infinity();
  for (const Vec& w : subsample_segment(segment)) {
    const Vec delta = w_star - w;
    if (delta.squaredNorm() == 0.0) continue;
    const double denom = model.hessian_quadratic_form(w_j, delta);
    double num = 0.0;
    for (Index q = 0; q < nodes.size(); ++q) {
      const double t = nodes(q);
      num += weights(q) * 2.0 * (1.0 - t) * model.hessian_quadratic_form(w + t * delta, delta);
    }
    const double g = num / denom;
    gmax = std::max(gmax, g);
    gmin = std::min(gmin, g);
  }
  if (!std::isfinite(gmax)) throw InvalidInput("local_qr_ratio: every point coincides with w*");
  return gmax / gmin;
}

/// Collects iterates between preconditioner updates, for local_qr_ratio.
/// Plug `observer()` into a run.
class TrajectoryRecorder {
 public:
  struct Interval {
    Vec anchor;
    std::vector<Vec> points;
  };

  IterateObserver observer() {
    return [this](Index, const Vec& w, bool refreshed) {
      if (refreshed || intervals_.empty()) intervals_.push_back({w, {}});
      intervals_.back().points.push_back(w);
    };
  }

  const std::vector<Interval>& intervals() const { return intervals_; }

 private:
  std::vector<Interval> intervals_;
};

inline std::vector<double> local_qr_ratios(const GlmModel& model,
                                           const std::vector<TrajectoryRecorder::Interval>& intervals,
                                           const Vec& w_star, int order = 16) {
  std::vector<double> out;
  out.reserve(intervals.size());
  for (const auto& iv : intervals) out.push_back(local_qr_ratio(model, iv.anchor, iv.points, w_star, order));
  return out;
}

/// zeta such that (1 - zeta) P <= grad^2 F(w) <= (1 + zeta) P.
inline double zeta_of(const Preconditioner& precond, const GlmModel& model, const Vec& w) {
  return zeta_estimate(precond.assemble(), model.full_hessian(w));
}

}  // namespace promise
