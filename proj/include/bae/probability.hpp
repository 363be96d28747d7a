#pragma once

// Dense Gaussian machinery: factorization with a jitter ladder, log-densities,
// sampling and ensemble moments. Everything is templated on the scalar type;
// `double` aliases are provided at the bottom.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <utility>

#include "bae/errors.hpp"
#include "bae/rng.hpp"

namespace bae {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Diagonal regularization ladder: 0, then first*s, first*s*step, ... up to
/// last*s, where s = trace/d (or 1 for a zero-trace matrix).
struct JitterPolicy {
  bool enabled = true;
  double first = 1e-12;
  double last = 1e-4;
  double step = 10.0;

  static JitterPolicy disabled() { return JitterPolicy{false}; }
};

template <typename Scalar>
struct Factorization {
  /// Lower-triangular Cholesky factor of covariance + jitter*I. When
  /// `semidefinite` is set the factor is a general square root instead.
  Mat<Scalar> factor;
  Scalar jitter = 0;
  /// Only reachable with jitter disabled: the matrix is PSD but singular.
  bool semidefinite = false;
};

template <typename Derived>
Mat<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

namespace detail {

template <typename Scalar>
bool try_cholesky(const Mat<Scalar>& s, Scalar jitter, Mat<Scalar>& out) {
  Mat<Scalar> shifted = s;
  shifted.diagonal().array() += jitter;
  Eigen::LLT<Mat<Scalar>> llt(shifted);
  if (llt.info() != Eigen::Success) return false;
  Mat<Scalar> l = llt.matrixL();
  if (!l.allFinite() || (l.diagonal().array() <= Scalar(0)).any()) return false;
  out = std::move(l);
  return true;
}

}  // namespace detail

template <typename Derived>
Factorization<typename Derived::Scalar> factorize(const Eigen::MatrixBase<Derived>& covariance,
                                                  const JitterPolicy& policy = {}) {
  using Scalar = typename Derived::Scalar;
  require(covariance.rows() == covariance.cols(), "factorize: covariance must be square");
  const Mat<Scalar> s = symmetrized(covariance);
  const Eigen::Index d = s.rows();

  Factorization<Scalar> result;
  if (d == 0) return result;
  if (detail::try_cholesky<Scalar>(s, Scalar(0), result.factor)) return result;

  if (policy.enabled) {
    Scalar scale = s.trace() / Scalar(d);
    if (!(scale > Scalar(0)) || !std::isfinite(double(scale))) scale = Scalar(1);
    for (int e = 0;; ++e) {
      const double rel = policy.first * std::pow(policy.step, e);
      if (rel > policy.last * (1.0 + 1e-9)) break;
      const Scalar jitter = Scalar(rel) * scale;
      if (detail::try_cholesky<Scalar>(s, jitter, result.factor)) {
        result.jitter = jitter;
        return result;
      }
    }
    throw DegenerateCovarianceError("factorize: jitter ladder exhausted (covariance badly indefinite)");
  }

  // Jitter disabled: accept a PSD-but-singular matrix through its eigen square root.
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> eig(s);
  const auto& lambda = eig.eigenvalues();
  const Scalar top = lambda.cwiseAbs().maxCoeff();
  if (lambda.minCoeff() < -Scalar(1e-10) * (top > Scalar(0) ? top : Scalar(1)))
    throw DegenerateCovarianceError("factorize: covariance is indefinite and jitter is disabled");
  result.factor = eig.eigenvectors() * lambda.cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal();
  result.semidefinite = true;
  return result;
}

/// Multivariate normal with an eagerly computed factorization. Immutable after
/// construction, so a single instance can be shared between threads.
template <typename Scalar = double>
class GaussianModel {
 public:
  using VectorType = Vec<Scalar>;
  using MatrixType = Mat<Scalar>;

  GaussianModel() = default;

  GaussianModel(VectorType mean, const MatrixType& covariance, const JitterPolicy& policy = {})
      : mean_(std::move(mean)), covariance_(symmetrized(covariance)) {
    if (covariance_.rows() != mean_.size() || covariance_.cols() != mean_.size()) {
      std::ostringstream msg;
      msg << "GaussianModel: mean has length " << mean_.size() << " but covariance is "
          << covariance_.rows() << "x" << covariance_.cols();
      throw ContractViolation(msg.str());
    }
    auto f = factorize(covariance_, policy);
    factor_ = std::move(f.factor);
    jitter_ = f.jitter;
    semidefinite_ = f.semidefinite;
    if (!semidefinite_) log_det_ = Scalar(2) * factor_.diagonal().array().log().sum();
  }

  static GaussianModel standard(Eigen::Index d) {
    return GaussianModel(VectorType::Zero(d), MatrixType::Identity(d, d));
  }

  Eigen::Index dim() const noexcept { return mean_.size(); }
  const VectorType& mean() const noexcept { return mean_; }
  const MatrixType& covariance() const noexcept { return covariance_; }
  const MatrixType& factor() const noexcept { return factor_; }
  Scalar jitter_used() const noexcept { return jitter_; }
  bool semidefinite() const noexcept { return semidefinite_; }
  /// log det(covariance + jitter*I).
  Scalar log_det() const noexcept { return log_det_; }

  /// L^{-1}(x - mean), the whitened residual.
  template <typename Derived>
  VectorType whiten(const Eigen::MatrixBase<Derived>& x) const {
    if (semidefinite_)
      throw DegenerateCovarianceError("GaussianModel: density undefined for singular covariance");
    return factor_.template triangularView<Eigen::Lower>().solve(x - mean_);
  }

 private:
  VectorType mean_;
  MatrixType covariance_;
  MatrixType factor_;
  Scalar jitter_ = 0;
  Scalar log_det_ = 0;
  bool semidefinite_ = false;
};

template <typename Scalar, typename Derived>
Scalar gaussian_logpdf(const Eigen::MatrixBase<Derived>& x, const GaussianModel<Scalar>& model) {
  if (x.size() != model.dim()) {
    std::ostringstream msg;
    msg << "gaussian_logpdf: point has length " << x.size() << ", model has dimension " << model.dim();
    throw ContractViolation(msg.str());
  }
  const Vec<Scalar> w = model.whiten(x);
  const Scalar log_two_pi = Scalar(std::log(2.0 * std::numbers::pi));
  return Scalar(-0.5) * (w.squaredNorm() + model.log_det() + Scalar(model.dim()) * log_two_pi);
}

/// Columns of `samples` are the ensemble members.
template <typename Scalar = double>
class SampleEnsemble {
 public:
  using MatrixType = Mat<Scalar>;

  explicit SampleEnsemble(MatrixType samples) : samples_(std::move(samples)) {
    require(samples_.cols() >= 1, "SampleEnsemble: at least one member required");
  }

  Eigen::Index count() const noexcept { return samples_.cols(); }
  Eigen::Index dim() const noexcept { return samples_.rows(); }
  const MatrixType& samples() const noexcept { return samples_; }
  auto member(Eigen::Index i) const { return samples_.col(i); }

 private:
  MatrixType samples_;
};

template <typename Scalar>
struct Moments {
  Vec<Scalar> mean;
  Mat<Scalar> covariance;
};

/// Arithmetic mean and the unbiased (1/(q-1)) sample covariance.
template <typename Scalar>
Moments<Scalar> estimate_moments(const SampleEnsemble<Scalar>& ensemble) {
  const auto q = ensemble.count();
  if (q < 2) throw InsufficientSamplesError("estimate_moments: need at least two samples");
  const auto& x = ensemble.samples();
  // Shift by the first member: identical members then give an exactly zero covariance.
  const Vec<Scalar> origin = x.col(0);
  const Mat<Scalar> shifted = x.colwise() - origin;
  Moments<Scalar> m;
  m.mean = origin + shifted.rowwise().sum() / Scalar(q);
  const Mat<Scalar> centered = x.colwise() - m.mean;
  m.covariance = symmetrized(centered * centered.transpose()) / Scalar(q - 1);
  return m;
}

/// n draws mean + L z with z standard normal.
template <typename Scalar>
SampleEnsemble<Scalar> sample_gaussian(const GaussianModel<Scalar>& model, Eigen::Index n, RngStream& rng) {
  require(n >= 1, "sample_gaussian: n must be positive");
  Mat<Scalar> z(model.factor().cols(), n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = Scalar(rng.normal());
  Mat<Scalar> out = model.factor() * z;
  out.colwise() += model.mean();
  return SampleEnsemble<Scalar>(std::move(out));
}

using GaussianModeld = GaussianModel<double>;
using SampleEnsembled = SampleEnsemble<double>;
using Momentsd = Moments<double>;

}  // namespace bae
