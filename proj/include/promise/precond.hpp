#pragma once

// The five subsampled-Newton preconditioners behind one update/direction
// interface:
//
//   SSN      P = X^T X + rho I, Cholesky of the smaller Gram matrix
//   NySSN    P = U diag(d) U^T + rho I, randomized Nystrom of X^T X
//   SASSN-C  P = Y^T Y + rho I with Y = Omega X, column-sparse Omega
//   SASSN-R  same with a row-sparse Omega
//   DiagSSN  P = diag(X^T X) + rho I
//
// X is the square-root factor of the subsampled Hessian on the first batch.
// The second batch drives the estimate of the preconditioned smoothness
// constant lambda_P = lambda_1(Z P^{-1}), with Z applied matrix-free.

#include <optional>
#include <string>
#include <variant>

#include <Eigen/Eigenvalues>

#include "promise/glm.hpp"
#include "promise/sketchlin.hpp"

namespace promise {

enum class PrecondKind { SSN, NySSN, SASSN_C, SASSN_R, DiagSSN };

inline std::string to_string(PrecondKind k) {
  switch (k) {
    case PrecondKind::SSN: return "SSN";
    case PrecondKind::NySSN: return "NySSN";
    case PrecondKind::SASSN_C: return "SASSN-C";
    case PrecondKind::SASSN_R: return "SASSN-R";
    case PrecondKind::DiagSSN: return "DiagSSN";
  }
  return "?";
}

inline PrecondKind parse_precond_kind(const std::string& s) {
  for (auto k : {PrecondKind::SSN, PrecondKind::NySSN, PrecondKind::SASSN_C, PrecondKind::SASSN_R,
                 PrecondKind::DiagSSN})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown preconditioner '" + s + "'");
}

inline bool uses_rank(PrecondKind k) {
  return k == PrecondKind::NySSN || k == PrecondKind::SASSN_C || k == PrecondKind::SASSN_R;
}

struct PrecondDefaults {
  std::optional<Index> rank;
  double rho;
};

/// Recommended rank and regularization for each kind.
inline PrecondDefaults default_config(PrecondKind kind) {
  PrecondDefaults d{std::nullopt, 1e-3};
  if (uses_rank(kind)) d.rank = 10;
  return d;
}

struct PrecondConfig {
  PrecondKind kind = PrecondKind::NySSN;
  Index rank = 10;
  double rho = 1e-3;
  PowerOptions power{};

  static PrecondConfig defaults(PrecondKind kind) {
    PrecondConfig c;
    c.kind = kind;
    const auto d = default_config(kind);
    c.rho = d.rho;
    c.rank = d.rank.value_or(0);
    return c;
  }
};

/// Preconditioner update times: k = 0 always, then every `every` steps if set.
struct UpdateSchedule {
  std::optional<Index> every;

  static UpdateSchedule once() { return {}; }
  static UpdateSchedule every_k(Index k) {
    if (k < 1) throw ConfigError("UpdateSchedule: period must be positive");
    return {k};
  }
  bool due(Index k) const { return k == 0 || (every && k % *every == 0); }
};

class Preconditioner {
 public:
  struct SsnFactors {
    std::variant<GramCholesky<Mat>, GramCholesky<SparseMat>> chol;
  };
  struct SassnFactors {
    Mat Y;
    GramCholesky<Mat> chol;
  };
  struct DiagFactors {
    Vec d;
  };

  /// Throws ConfigError if rho < nu, rho <= 0, or a rank-based kind has rank < 1.
  Preconditioner(PrecondConfig cfg, double nu) : cfg_(cfg) {
    if (!(cfg_.rho > 0.0)) throw ConfigError("preconditioner: rho must be positive");
    if (cfg_.rho < nu)
      throw ConfigError("preconditioner: rho must be at least the model regularization nu");
    if (uses_rank(cfg_.kind) && cfg_.rank < 1)
      throw ConfigError("preconditioner: rank must be positive");
  }

  PrecondKind kind() const { return cfg_.kind; }
  double rho() const { return cfg_.rho; }
  Index rank() const { return cfg_.rank; }
  const PrecondConfig& config() const { return cfg_; }
  bool ready() const { return !std::holds_alternative<std::monostate>(factors_); }
  double lambda_p() const { return lambda_p_; }
  const PowerResult& last_power_result() const { return power_; }

  /// Rebuilds P at w from batch b1 and re-estimates lambda_P from batch b2.
  void update(const GlmModel& model, const Batch& b1, const Batch& b2, const Vec& w, Rng& rng) {
    build(model.hessian_sqrt_factor(b1, w), rng);
    const auto z = model.subsampled_hessian(b2, w);
    estimate_smoothness([&z](const Vec& v) { return z.apply(v); }, model.p(), rng);
  }

  /// Phase 1 only: factor P from an explicit square-root factor.
  void build(const DesignMatrix& X, Rng& rng) {
    const double rho = cfg_.rho;
    dim_ = X.cols();
    switch (cfg_.kind) {
      case PrecondKind::SSN:
        if (X.is_sparse()) {
          factors_ = SsnFactors{gram_cholesky(X.sparse(), rho)};
        } else {
          factors_ = SsnFactors{gram_cholesky(X.dense(), rho)};
        }
        break;
      case PrecondKind::NySSN: {
        const Index r = std::min(cfg_.rank, X.cols());
        factors_ = X.visit([&](const auto& m) { return randomized_nystrom(m, r, rng); });
        break;
      }
      case PrecondKind::SASSN_C:
      case PrecondKind::SASSN_R: {
        const auto omega = cfg_.kind == PrecondKind::SASSN_C
                               ? sparse_embedding_cols(cfg_.rank, X.rows(), rng)
                               : sparse_embedding_rows(cfg_.rank, X.rows(), rng);
        Mat Y = X.visit([&](const auto& m) { return omega.apply(m); });
        auto chol = gram_cholesky(Y, rho);
        factors_ = SassnFactors{std::move(Y), std::move(chol)};
        break;
      }
      case PrecondKind::DiagSSN: {
        Vec d = Vec::Zero(X.cols());
        if (X.is_sparse()) {
          const SparseMat& s = X.sparse();
          for (Index i = 0; i < s.outerSize(); ++i)
            for (SparseMat::InnerIterator it(s, i); it; ++it) d(it.col()) += it.value() * it.value();
        } else {
          d = X.dense().colwise().squaredNorm().transpose();
        }
        factors_ = DiagFactors{std::move(d)};
        break;
      }
    }
  }

  /// Phase 2 only: lambda_P = lambda_1(Z P^{-1}) for a caller-supplied Z.
  double estimate_smoothness(const LinearOperator& apply_z, Index p, Rng& rng) {
    power_ = top_generalized_eigenvalue(
        apply_z, [this](const Vec& v) { return direction(v); }, p, cfg_.power, rng);
    lambda_p_ = power_.lambda;
    return lambda_p_;
  }

  /// P^{-1} g using the held factors.
  Vec direction(const Vec& g) const {
    if (!ready()) throw InvalidInput("preconditioner: direction called before update");
    if (g.size() != dim_) throw InvalidInput("preconditioner: dimension mismatch");
    const double rho = cfg_.rho;
    return std::visit(
        [&](const auto& f) -> Vec {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, SsnFactors>) {
            return std::visit([&](const auto& c) { return gram_inverse_apply(c, rho, g); }, f.chol);
          } else if constexpr (std::is_same_v<T, NystromFactors>) {
            return nystrom_inverse_apply(f, rho, g);
          } else if constexpr (std::is_same_v<T, SassnFactors>) {
            return gram_inverse_apply(f.chol, rho, g);
          } else if constexpr (std::is_same_v<T, DiagFactors>) {
            return (g.array() / (f.d.array() + rho)).matrix();
          } else {
            return g;  // unreachable: ready() checked above
          }
        },
        factors_);
  }

  /// Dense P, for tests and diagnostics.
  Mat assemble() const {
    if (!ready()) throw InvalidInput("preconditioner: assemble called before update");
    Mat P = std::visit(
        [&](const auto& f) -> Mat {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, SsnFactors>) {
            return std::visit(
                [](const auto& c) -> Mat {
                  const Mat x = Mat(c.X);
                  return x.transpose() * x;
                },
                f.chol);
          } else if constexpr (std::is_same_v<T, NystromFactors>) {
            return f.U * f.d.asDiagonal() * f.U.transpose();
          } else if constexpr (std::is_same_v<T, SassnFactors>) {
            return f.Y.transpose() * f.Y;
          } else if constexpr (std::is_same_v<T, DiagFactors>) {
            return Mat(f.d.asDiagonal());
          } else {
            return Mat();
          }
        },
        factors_);
    P.diagonal().array() += cfg_.rho;
    return P;
  }

  const auto& factors() const { return factors_; }

 private:
  PrecondConfig cfg_;
  Index dim_ = 0;
  std::variant<std::monostate, SsnFactors, NystromFactors, SassnFactors, DiagFactors> factors_;
  double lambda_p_ = 0.0;
  PowerResult power_{};
};

/// Smallest zeta with (1 - zeta) P <= H <= (1 + zeta) P, from the generalized
/// eigenvalues of the pencil (H, P). Dense; p <= 500.
inline double zeta_estimate(const Mat& P, const Mat& H) {
  if (P.rows() > 500) throw InvalidInput("zeta_estimate: dimension exceeds 500");
  if (P.rows() != H.rows() || P.cols() != H.cols())
    throw InvalidInput("zeta_estimate: dimension mismatch");
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(H, P, Eigen::EigenvaluesOnly);
  if (ges.info() != Eigen::Success) throw NumericalError("zeta_estimate: P is not positive definite");
  const Vec& lam = ges.eigenvalues();
  return std::max(1.0 - lam.minCoeff(), lam.maxCoeff() - 1.0);
}

inline double zeta_estimate(const Preconditioner& precond, const Mat& H) {
  return zeta_estimate(precond.assemble(), H);
}

/// Condition number of P^{-1/2} H P^{-1/2}.
inline double preconditioned_condition_number(const Mat& P, const Mat& H) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(H, P, Eigen::EigenvaluesOnly);
  if (ges.info() != Eigen::Success) throw NumericalError("condition number: P is not PD");
  return ges.eigenvalues().maxCoeff() / ges.eigenvalues().minCoeff();
}

}  // namespace promise
