#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace promise {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// CSR storage for sparse design matrices.
using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// All randomness flows through an explicitly seeded generator of this type.
using Rng = std::mt19937_64;

/// Row indices of a minibatch, in draw order.
using Batch = std::vector<Index>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error("invalid_input", what) {}
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, bool retriable = false)
      : Error("numerical_error", what), retriable_(retriable) {}
  bool retriable() const noexcept { return retriable_; }

 private:
  bool retriable_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("parse_error", "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// ---------------------------------------------------------------------------
// Small numeric helpers

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const SparseMat& m) {
  for (Index k = 0; k < m.nonZeros(); ++k) {
    if (!std::isfinite(m.valuePtr()[k])) return false;
  }
  return true;
}

/// Spacing between |x| and the next larger double (MATLAB's eps(x)).
inline double spacing(double x) {
  x = std::abs(x);
  return std::nextafter(x, std::numeric_limits<double>::infinity()) - x;
}

inline Mat gaussian_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

inline Vec gaussian_vector(Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(n);
  for (Index i = 0; i < n; ++i) out(i) = normal(rng);
  return out;
}

/// Uniform sampling without replacement from {0, ..., n-1}.
///
/// Keeps a persistent permutation and runs a partial Fisher-Yates shuffle on
/// its prefix for each draw, so every draw costs O(b) regardless of n.
class BatchSampler {
 public:
  explicit BatchSampler(Index n) : perm_(static_cast<std::size_t>(n)) {
    if (n < 1) throw InvalidInput("BatchSampler: population must be non-empty");
    std::iota(perm_.begin(), perm_.end(), Index{0});
  }

  Index population() const { return static_cast<Index>(perm_.size()); }

  Batch draw(Index b, Rng& rng) {
    const auto n = perm_.size();
    if (b < 1 || static_cast<std::size_t>(b) > n)
      throw InvalidInput("BatchSampler: batch size must lie in [1, n]");
    for (std::size_t i = 0; i < static_cast<std::size_t>(b); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(perm_[i], perm_[pick(rng)]);
    }
    return Batch(perm_.begin(), perm_.begin() + b);
  }

 private:
  std::vector<Index> perm_;
};

inline Batch full_batch(Index n) {
  Batch b(static_cast<std::size_t>(n));
  std::iota(b.begin(), b.end(), Index{0});
  return b;
}

}  // namespace promise
