#pragma once

#include <memory>

#include <Eigen/Eigenvalues>

#include "promise/glm.hpp"

namespace promise::test {

inline double rel_err(const Vec& a, const Vec& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

inline double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

inline Mat random_spd(Index p, Rng& rng, double shift = 1.0) {
  const Mat g = gaussian_matrix(p, p, rng);
  Mat s = g * g.transpose();
  s.diagonal().array() += shift;
  return s;
}

/// Random rows with entries N(0, 1/p), labels either real or +-1.
inline std::shared_ptr<const Dataset> random_dataset(Index n, Index p, bool binary, Rng& rng) {
  Mat A = gaussian_matrix(n, p, rng) / std::sqrt(static_cast<double>(p));
  Vec b = gaussian_vector(n, rng);
  if (binary)
    for (Index i = 0; i < n; ++i) b(i) = b(i) >= 0.0 ? 1.0 : -1.0;
  return std::make_shared<const Dataset>(Dataset{DesignMatrix(std::move(A)), std::move(b)});
}

inline SparseMat random_sparse(Index n, Index p, double density, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j)
      if (u(rng) < density) t.emplace_back(i, j, z(rng));
  SparseMat s(n, p);
  s.setFromTriplets(t.begin(), t.end());
  s.makeCompressed();
  return s;
}

inline double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Eigenvalues of the pencil (Z, P), ascending.
inline Vec pencil_eigenvalues(const Mat& Z, const Mat& P) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(Z, P, Eigen::EigenvaluesOnly);
  return ges.eigenvalues();
}

}  // namespace promise::test
