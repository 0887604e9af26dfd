#pragma once

// Numerical kernels shared by the preconditioners: randomized Nystrom
// approximation, regularized Gram Cholesky factorizations with Woodbury
// inverse applies, sparse sign embeddings and power iteration for the top
// eigenvalue of a matrix pencil.

#include <algorithm>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "promise/core.hpp"

namespace promise {

// ---------------------------------------------------------------------------
// Randomized Nystrom approximation

/// Factored low-rank approximation U diag(d) U^T.
///
/// U is p x r with orthonormal columns; d is non-negative and sorted in
/// descending order.
struct NystromFactors {
  Mat U;
  Vec d;

  Index dim() const { return U.rows(); }
  Index rank() const { return U.cols(); }
};

namespace detail {

template <class XMat>
Mat nystrom_sketch(const XMat& X, const Mat& omega) {
  Mat x_omega = X * omega;
  return X.transpose() * x_omega;
}

inline Mat orthonormal_test_matrix(Index p, Index r, Rng& rng) {
  Mat omega = gaussian_matrix(p, r, rng);
  Eigen::HouseholderQR<Mat> qr(omega);
  return qr.householderQ() * Mat::Identity(p, r);
}

// One attempt of the stabilized Nystrom construction for a fixed test matrix.
// Throws a retriable NumericalError when the shifted core matrix is not PD.
inline NystromFactors nystrom_from_sketch(const Mat& omega, const Mat& Y) {
  const Index p = omega.rows();
  const Index r = omega.cols();

  const double y_norm = Y.norm();
  if (y_norm == 0.0) {
    // Zero operator: any orthonormal basis with zero eigenvalues.
    return {omega, Vec::Zero(r)};
  }

  const double shift = std::sqrt(static_cast<double>(p)) * spacing(y_norm);
  const Mat y_shifted = Y + shift * omega;

  Mat core = omega.transpose() * y_shifted;
  core = 0.5 * (core + core.transpose()).eval();
  Eigen::LLT<Mat> chol(core);
  if (chol.info() != Eigen::Success)
    throw NumericalError("randomized_nystrom: Cholesky of shifted core matrix failed",
                         /*retriable=*/true);

  // S = Y_shift C^{-T}, i.e. S^T = C^{-1} Y_shift^T.
  const Mat s_t = chol.matrixL().solve(y_shifted.transpose());
  const Mat S = s_t.transpose();

  Eigen::JacobiSVD<Mat> svd(S, Eigen::ComputeThinU);
  Vec d = svd.singularValues().array().square() - shift;
  d = d.cwiseMax(0.0);
  return {svd.matrixU(), d};
}

}  // namespace detail

/// Randomized Nystrom approximation of H = X^T X with a QR-orthonormalized
/// Gaussian test matrix and the stabilizing shift sqrt(p) * eps(||Y||_F).
///
/// A Cholesky breakdown of the shifted core matrix triggers one re-draw of the
/// test matrix; a second breakdown is reported as a retriable NumericalError.
template <class XMat>
NystromFactors randomized_nystrom(const XMat& X, Index r, Rng& rng) {
  const Index p = X.cols();
  if (r < 1 || r > p)
    throw InvalidInput("randomized_nystrom: rank must lie in [1, p], got " + std::to_string(r));
  if (!all_finite(X)) throw InvalidInput("randomized_nystrom: non-finite input");

  for (int attempt = 0;; ++attempt) {
    const Mat omega = detail::orthonormal_test_matrix(p, r, rng);
    const Mat Y = detail::nystrom_sketch(X, omega);
    try {
      return detail::nystrom_from_sketch(omega, Y);
    } catch (const NumericalError&) {
      if (attempt >= 1) throw;
    }
  }
}

/// Applies (U diag(d) U^T + rho I)^{-1} to v in O(rp) via the Woodbury formula.
inline Vec nystrom_inverse_apply(const NystromFactors& f, double rho, const Vec& v) {
  if (v.size() != f.dim())
    throw InvalidInput("nystrom_inverse_apply: dimension mismatch");
  if (!(rho > 0.0)) throw InvalidInput("nystrom_inverse_apply: rho must be positive");
  const Vec coeffs = f.U.transpose() * v;
  const Vec scaled =
      ((f.d.array() + rho).inverse() - 1.0 / rho).matrix().cwiseProduct(coeffs);
  return v / rho + f.U * scaled;
}

// ---------------------------------------------------------------------------
// Regularized Gram Cholesky

/// Cholesky factor of X^T X + rho I (tall case) or X X^T + rho I (wide case).
///
/// The wide case keeps X so that the inverse can be applied through Woodbury.
template <class XMat>
struct GramCholesky {
  Mat L;
  bool wide_case = false;
  XMat X;
  double rho = 0.0;

  Index dim() const { return X.cols(); }
};

template <class XMat>
GramCholesky<XMat> gram_cholesky(const XMat& X, double rho) {
  if (!(rho > 0.0)) throw InvalidInput("gram_cholesky: rho must be positive");
  GramCholesky<XMat> out;
  out.rho = rho;
  out.X = X;
  out.wide_case = X.rows() < X.cols();

  Mat gram;
  if (out.wide_case) {
    gram = Mat(X * X.transpose());
  } else {
    gram = Mat(X.transpose() * X);
  }
  gram.diagonal().array() += rho;

  Eigen::LLT<Mat> chol(gram);
  if (chol.info() != Eigen::Success || !chol.matrixLLT().allFinite())
    throw NumericalError("gram_cholesky: factorization failed (non-finite data?)");
  out.L = chol.matrixL();
  return out;
}

/// Applies (X^T X + rho I)^{-1} to g for either branch of gram_cholesky.
template <class XMat>
Vec gram_inverse_apply(const GramCholesky<XMat>& c, double rho, const Vec& g) {
  if (g.size() != c.dim()) throw InvalidInput("gram_inverse_apply: dimension mismatch");
  const auto lower = c.L.template triangularView<Eigen::Lower>();
  if (!c.wide_case) {
    Vec v = lower.solve(g);
    lower.transpose().solveInPlace(v);
    return v;
  }
  Vec v = c.X * g;
  lower.solveInPlace(v);
  lower.transpose().solveInPlace(v);
  const Vec back = c.X.transpose() * v;
  return (g - back) / rho;
}

// ---------------------------------------------------------------------------
// Sparse sign embeddings

/// r x b sparse sign matrix stored as explicit entry lists.
///
/// Duplicate (row, col) draws are kept as separate entries; they add when the
/// embedding is applied, so the stored-entry count per column (column-sparse)
/// or per row (row-sparse) is exactly the sparsity parameter.
struct SparseEmbedding {
  enum class Layout { ColumnSparse, RowSparse };

  struct Entry {
    Index row;
    Index col;
    double value;
  };

  Index rows = 0;
  Index cols = 0;
  Index sparsity = 0;
  double scale = 0.0;
  Layout layout = Layout::ColumnSparse;
  std::vector<Entry> entries;

  Mat to_dense() const {
    Mat out = Mat::Zero(rows, cols);
    for (const auto& e : entries) out(e.row, e.col) += e.value;
    return out;
  }

  /// Omega * X for a b x p matrix X (dense or CSR).
  template <class XMat>
  Mat apply(const XMat& X) const {
    if (X.rows() != cols) throw InvalidInput("SparseEmbedding::apply: dimension mismatch");
    Mat out = Mat::Zero(rows, X.cols());
    if constexpr (std::is_same_v<XMat, SparseMat>) {
      for (const auto& e : entries)
        for (SparseMat::InnerIterator it(X, e.col); it; ++it)
          out(e.row, it.col()) += e.value * it.value();
    } else {
      for (const auto& e : entries) out.row(e.row) += e.value * X.row(e.col);
    }
    return out;
  }
};

namespace detail {

inline double random_sign(Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return unif(rng) - 0.5 >= 0.0 ? 1.0 : -1.0;
}

}  // namespace detail

/// Column-sparse embedding: min(r, 8) entries of +-sqrt(1/zeta) per column,
/// rows drawn uniformly with replacement.
inline SparseEmbedding sparse_embedding_cols(Index r, Index b, Rng& rng) {
  if (r < 1 || b < 1) throw InvalidInput("sparse_embedding_cols: r and b must be positive");
  SparseEmbedding e;
  e.rows = r;
  e.cols = b;
  e.layout = SparseEmbedding::Layout::ColumnSparse;
  e.sparsity = std::min<Index>(r, 8);
  e.scale = std::sqrt(1.0 / static_cast<double>(e.sparsity));
  e.entries.reserve(static_cast<std::size_t>(e.sparsity * b));
  std::uniform_int_distribution<Index> pick_row(0, r - 1);
  for (Index col = 0; col < b; ++col)
    for (Index k = 0; k < e.sparsity; ++k) {
      const Index row = pick_row(rng);
      e.entries.push_back({row, col, e.scale * detail::random_sign(rng)});
    }
  return e;
}

/// Row-sparse embedding: min(b, 8) entries of +-sqrt(b / (zeta r)) per row,
/// columns drawn uniformly with replacement.
inline SparseEmbedding sparse_embedding_rows(Index r, Index b, Rng& rng) {
  if (r < 1 || b < 1) throw InvalidInput("sparse_embedding_rows: r and b must be positive");
  SparseEmbedding e;
  e.rows = r;
  e.cols = b;
  e.layout = SparseEmbedding::Layout::RowSparse;
  e.sparsity = std::min<Index>(b, 8);
  e.scale = std::sqrt(static_cast<double>(b) / static_cast<double>(e.sparsity * r));
  e.entries.reserve(static_cast<std::size_t>(e.sparsity * r));
  std::uniform_int_distribution<Index> pick_col(0, b - 1);
  for (Index row = 0; row < r; ++row)
    for (Index k = 0; k < e.sparsity; ++k) {
      const Index col = pick_col(rng);
      e.entries.push_back({row, col, e.scale * detail::random_sign(rng)});
    }
  return e;
}

// ---------------------------------------------------------------------------
// Power iteration on a matrix pencil

using LinearOperator = std::function<Vec(const Vec&)>;

struct PowerOptions {
  double tol = 1e-3;
  int max_iter = 100;
  int max_restarts = 3;
};

struct PowerResult {
  double lambda = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Largest eigenvalue of Z P^{-1} (equivalently P^{-1} Z) by power iteration
/// on v -> P^{-1} Z v.
///
/// The Rayleigh quotient is taken in the Z inner product, in which P^{-1} Z is
/// self-adjoint: lambda_k = (Zv)^T P^{-1} (Zv) / v^T Z v. For PSD Z and PD P
/// the sequence is non-decreasing and bounded by the top eigenvalue.
/// Iteration stops when |lambda_{k+1} - lambda_k| <= tol * lambda_k or after
/// max_iter iterations (converged = false, last estimate returned).
inline PowerResult top_generalized_eigenvalue(const LinearOperator& apply_z,
                                              const LinearOperator& apply_pinv, Index p,
                                              const PowerOptions& opts, Rng& rng) {
  if (!(opts.tol > 0.0)) throw InvalidInput("top_generalized_eigenvalue: tol must be positive");
  if (p < 1) throw InvalidInput("top_generalized_eigenvalue: empty operator");

  Vec v;
  for (int restart = 0;; ++restart) {
    if (restart > opts.max_restarts)
      throw NumericalError("top_generalized_eigenvalue: start vector collapsed to zero");
    v = gaussian_vector(p, rng);
    const double nrm = v.norm();
    if (nrm == 0.0) continue;
    v /= nrm;
    const Vec probe = apply_pinv(apply_z(v));
    if (probe.norm() > 0.0 && probe.allFinite()) break;
  }

  PowerResult result;
  double previous = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vec zv = apply_z(v);
    const Vec mv = apply_pinv(zv);
    const double denom = v.dot(zv);
    const double lambda = denom > 0.0 ? zv.dot(mv) / denom : 0.0;
    result.lambda = lambda;
    result.iterations = it;
    if (!std::isfinite(lambda))
      throw NumericalError("top_generalized_eigenvalue: non-finite Rayleigh quotient");
    if (it > 1 && std::abs(lambda - previous) <= opts.tol * std::abs(previous)) {
      result.converged = true;
      break;
    }
    previous = lambda;
    const double nrm = mv.norm();
    if (nrm == 0.0) {
      // Start vector fell into the null space of Z.
      result.converged = true;
      break;
    }
    v = mv / nrm;
  }
  return result;
}

}  // namespace promise
