#pragma once

// Generalized linear model objectives F(w) = (1/n) sum_i phi_i(a_i^T w) + (nu/2)||w||^2
// for ridge and l2-regularized logistic regression, exposed through the
// oracle interface consumed by the preconditioners and optimizers.

#include <memory>
#include <string>
#include <variant>

#include "promise/core.hpp"

namespace promise {

/// Design matrix with either dense or CSR storage.
class DesignMatrix {
 public:
  DesignMatrix() = default;
  DesignMatrix(Mat dense) : storage_(std::move(dense)) {}          // NOLINT
  DesignMatrix(SparseMat sparse) : storage_(std::move(sparse)) {}  // NOLINT

  Index rows() const {
    return std::visit([](const auto& m) { return Index(m.rows()); }, storage_);
  }
  Index cols() const {
    return std::visit([](const auto& m) { return Index(m.cols()); }, storage_);
  }
  bool is_sparse() const { return std::holds_alternative<SparseMat>(storage_); }

  const Mat& dense() const { return std::get<Mat>(storage_); }
  const SparseMat& sparse() const { return std::get<SparseMat>(storage_); }

  template <class F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), storage_);
  }

  double row_dot(Index i, const Vec& w) const {
    if (is_sparse()) return sparse().row(i).dot(w);
    return dense().row(i).dot(w);
  }

  /// out += alpha * a_i
  void add_row(Index i, double alpha, Vec& out) const {
    if (is_sparse()) {
      for (SparseMat::InnerIterator it(sparse(), i); it; ++it)
        out(it.col()) += alpha * it.value();
    } else {
      out.noalias() += alpha * dense().row(i).transpose();
    }
  }

  Vec multiply(const Vec& w) const {
    return visit([&](const auto& m) -> Vec { return m * w; });
  }
  Vec multiply_transpose(const Vec& v) const {
    return visit([&](const auto& m) -> Vec { return m.transpose() * v; });
  }

  /// Rows in batch order, same storage kind.
  DesignMatrix select_rows(const Batch& batch) const {
    const auto b = static_cast<Index>(batch.size());
    if (is_sparse()) {
      const SparseMat& a = sparse();
      SparseMat out(b, a.cols());
      Index nnz = 0;
      for (Index i : batch) nnz += a.outerIndexPtr()[i + 1] - a.outerIndexPtr()[i];
      out.reserve(nnz);
      for (Index r = 0; r < b; ++r) {
        out.startVec(r);
        for (SparseMat::InnerIterator it(a, batch[static_cast<std::size_t>(r)]); it; ++it)
          out.insertBack(r, it.col()) = it.value();
      }
      out.finalize();
      return out;
    }
    const Mat& a = dense();
    Mat out(b, a.cols());
    for (Index r = 0; r < b; ++r) out.row(r) = a.row(batch[static_cast<std::size_t>(r)]);
    return out;
  }

  /// diag(scale) * A, preserving storage kind.
  DesignMatrix scale_rows(const Vec& scale) const {
    if (is_sparse()) {
      SparseMat out = sparse();
      for (Index i = 0; i < out.outerSize(); ++i)
        for (SparseMat::InnerIterator it(out, i); it; ++it) it.valueRef() *= scale(i);
      return out;
    }
    return Mat(scale.asDiagonal() * dense());
  }

  Mat to_dense() const {
    if (is_sparse()) return Mat(sparse());
    return dense();
  }

  Vec row_squared_norms() const {
    if (is_sparse()) {
      const SparseMat& a = sparse();
      Vec out(a.rows());
      for (Index i = 0; i < a.rows(); ++i) out(i) = a.row(i).squaredNorm();
      return out;
    }
    return dense().rowwise().squaredNorm();
  }

  bool all_finite() const {
    return visit([](const auto& m) { return promise::all_finite(m); });
  }

 private:
  std::variant<Mat, SparseMat> storage_;
};

/// Design matrix plus labels.
struct Dataset {
  DesignMatrix A;
  Vec labels;

  Index n() const { return A.rows(); }
  Index p() const { return A.cols(); }

  /// Throws InvalidInput on shape mismatch, non-finite entries, unsorted CSR
  /// columns, or (when require_binary) labels outside {-1, +1}.
  void validate(bool require_binary) const {
    if (labels.size() != A.rows()) throw InvalidInput("Dataset: label count does not match rows");
    if (!A.all_finite() || !labels.allFinite()) throw InvalidInput("Dataset: non-finite entries");
    if (A.is_sparse()) {
      const SparseMat& s = A.sparse();
      if (!s.isCompressed()) throw InvalidInput("Dataset: CSR matrix must be compressed");
      for (Index i = 0; i < s.outerSize(); ++i) {
        const auto* idx = s.innerIndexPtr();
        for (auto k = s.outerIndexPtr()[i] + 1; k < s.outerIndexPtr()[i + 1]; ++k)
          if (idx[k] <= idx[k - 1]) throw InvalidInput("Dataset: CSR column indices not sorted");
      }
    }
    if (require_binary) {
      for (Index i = 0; i < labels.size(); ++i)
        if (labels(i) != 1.0 && labels(i) != -1.0)
          throw InvalidInput("Dataset: classification labels must be -1 or +1");
    }
  }
};

enum class LossKind { Squared, Logistic };

inline std::string to_string(LossKind k) { return k == LossKind::Squared ? "ridge" : "logistic"; }

namespace detail {

// sigma(x) = 1 / (1 + exp(-x)), evaluated without overflow.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(-m))
inline double logistic_loss(double m) {
  if (m > 0.0) return std::log1p(std::exp(-m));
  return -m + std::log1p(std::exp(m));
}

// sigma(m) (1 - sigma(m)) = e / (1 + e)^2 with e = exp(-|m|).
inline double logistic_curvature(double m) {
  const double e = std::exp(-std::abs(m));
  return e / ((1.0 + e) * (1.0 + e));
}

}  // namespace detail

/// A GLM objective over a shared, immutable dataset.
///
/// All oracles are const and safe to call concurrently.
class GlmModel {
 public:
  GlmModel(LossKind loss, double nu, std::shared_ptr<const Dataset> data)
      : loss_(loss), nu_(nu), data_(std::move(data)) {
    if (!data_) throw InvalidInput("GlmModel: null dataset");
    if (!(nu_ >= 0.0)) throw InvalidInput("GlmModel: nu must be non-negative");
    data_->validate(loss_ == LossKind::Logistic);
  }

  LossKind loss() const { return loss_; }
  const Dataset& data() const { return *data_; }
  std::shared_ptr<const Dataset> data_ptr() const { return data_; }
  Index n() const { return data_->n(); }
  Index p() const { return data_->p(); }

  double get_reg() const { return nu_; }

  DesignMatrix get_data(const Batch& batch) const {
    check_batch(batch, /*allow_empty=*/true);
    return data_->A.select_rows(batch);
  }

  /// phi_i''(a_i^T w) for each i in the batch.
  Vec get_hessian_diagonal(const Batch& batch, const Vec& w) const {
    check_batch(batch, true);
    check_point(w);
    Vec out(static_cast<Index>(batch.size()));
    for (std::size_t k = 0; k < batch.size(); ++k) {
      if (loss_ == LossKind::Squared) {
        out(static_cast<Index>(k)) = 1.0;
      } else {
        const Index i = batch[k];
        const double m = data_->labels(i) * data_->A.row_dot(i, w);
        out(static_cast<Index>(k)) = detail::logistic_curvature(m);
      }
    }
    return out;
  }

  /// phi_i'(a_i^T w): the scalar with grad f_i(w) = coefficient * a_i.
  double gradient_coefficient(Index i, const Vec& w) const {
    const double t = data_->A.row_dot(i, w);
    if (loss_ == LossKind::Squared) return t - data_->labels(i);
    const double b = data_->labels(i);
    return -b * detail::sigmoid(-b * t);
  }

  /// (1/|B|) sum_{i in B} grad f_i(w) + nu w
  Vec get_stoch_grad(const Batch& batch, const Vec& w) const {
    check_batch(batch, false);
    check_point(w);
    Vec g = Vec::Zero(p());
    for (Index i : batch) data_->A.add_row(i, gradient_coefficient(i, w), g);
    g /= static_cast<double>(batch.size());
    g.noalias() += nu_ * w;
    return g;
  }

  Vec get_full_grad(const Vec& w) const {
    check_point(w);
    const Vec t = data_->A.multiply(w);
    Vec coef(n());
    for (Index i = 0; i < n(); ++i) coef(i) = coefficient_from_margin(i, t(i));
    Vec g = data_->A.multiply_transpose(coef) / static_cast<double>(n());
    g.noalias() += nu_ * w;
    return g;
  }

  double full_loss(const Vec& w) const {
    check_point(w);
    const Vec t = data_->A.multiply(w);
    double sum = 0.0;
    for (Index i = 0; i < n(); ++i) {
      const double b = data_->labels(i);
      if (loss_ == LossKind::Squared) {
        const double r = t(i) - b;
        sum += 0.5 * r * r;
      } else {
        sum += detail::logistic_loss(b * t(i));
      }
    }
    return sum / static_cast<double>(n()) + 0.5 * nu_ * w.squaredNorm();
  }

  /// Square-root factor X = (1/sqrt(b)) diag(sqrt(phi'')) A_B of the
  /// unregularized subsampled Hessian, so that X^T X = (1/b) A_B^T Phi'' A_B.
  DesignMatrix hessian_sqrt_factor(const Batch& batch, const Vec& w) const {
    check_batch(batch, false);
    const Vec d = get_hessian_diagonal(batch, w);
    const Vec scale = (d / static_cast<double>(batch.size())).cwiseSqrt();
    return get_data(batch).scale_rows(scale);
  }

  /// Matrix-free v -> (1/|B|) A_B^T Phi''(A_B w) A_B v + nu v.
  class SubsampledHessian {
   public:
    SubsampledHessian(DesignMatrix rows, Vec weights, double nu)
        : rows_(std::move(rows)), weights_(std::move(weights)), nu_(nu) {}

    Vec apply(const Vec& v) const {
      Vec t = rows_.multiply(v);
      t.array() *= weights_.array();
      Vec out = rows_.multiply_transpose(t);
      out.noalias() += nu_ * v;
      return out;
    }

    Mat assemble() const {
      const Mat a = rows_.to_dense();
      Mat h = a.transpose() * weights_.asDiagonal() * a;
      h.diagonal().array() += nu_;
      return h;
    }

   private:
    DesignMatrix rows_;
    Vec weights_;
    double nu_;
  };

  SubsampledHessian subsampled_hessian(const Batch& batch, const Vec& w) const {
    check_batch(batch, false);
    Vec weights = get_hessian_diagonal(batch, w) / static_cast<double>(batch.size());
    return {get_data(batch), std::move(weights), nu_};
  }

  /// Dense (1/n) A^T Phi''(Aw) A + nu I.
  Mat full_hessian(const Vec& w) const { return subsampled_hessian(full_batch(n()), w).assemble(); }

  /// Quadratic form v^T grad^2 F(x) v without assembling the Hessian.
  double hessian_quadratic_form(const Vec& x, const Vec& v) const {
    const Vec t = data_->A.multiply(x);
    const Vec av = data_->A.multiply(v);
    double sum = 0.0;
    for (Index i = 0; i < n(); ++i) {
      const double curv =
          loss_ == LossKind::Squared ? 1.0 : detail::logistic_curvature(data_->labels(i) * t(i));
      sum += curv * av(i) * av(i);
    }
    return sum / static_cast<double>(n()) + nu_ * v.squaredNorm();
  }

  /// Upper bound on the average smoothness: (1/n) sum ||a_i||^2, times 1/4
  /// for the logistic loss.
  double average_smoothness() const {
    const double avg = data_->A.row_squared_norms().mean();
    return loss_ == LossKind::Squared ? avg : 0.25 * avg;
  }

 private:
  double coefficient_from_margin(Index i, double t) const {
    const double b = data_->labels(i);
    if (loss_ == LossKind::Squared) return t - b;
    return -b * detail::sigmoid(-b * t);
  }

  void check_batch(const Batch& batch, bool allow_empty) const {
    if (!allow_empty && batch.empty()) throw InvalidInput("GlmModel: empty batch");
    for (Index i : batch)
      if (i < 0 || i >= n())
        throw InvalidInput("GlmModel: batch index " + std::to_string(i) + " out of range");
  }

  void check_point(const Vec& w) const {
    if (w.size() != p()) throw InvalidInput("GlmModel: point has wrong dimension");
  }

  LossKind loss_;
  double nu_;
  std::shared_ptr<const Dataset> data_;
};

}  // namespace promise
