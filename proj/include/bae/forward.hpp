#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <utility>

#include "bae/errors.hpp"
#include "bae/probability.hpp"

namespace bae {

/// Output of a forward-model run: either an observation vector or a failure
/// reason. Failures are values, never exceptions, so callers can count them.
class EvalResult {
 public:
  EvalResult(Eigen::VectorXd y) : y_(std::move(y)), ok_(true) {}  // NOLINT(implicit)

  static EvalResult failure(std::string reason) {
    EvalResult r;
    r.reason_ = std::move(reason);
    return r;
  }

  bool ok() const noexcept { return ok_; }
  explicit operator bool() const noexcept { return ok_; }
  const Eigen::VectorXd& value() const {
    if (!ok_) throw Error("EvalResult: no value (" + reason_ + ")");
    return y_;
  }
  const std::string& reason() const noexcept { return reason_; }

 private:
  EvalResult() = default;
  Eigen::VectorXd y_;
  std::string reason_;
  bool ok_ = false;
};

/// Deterministic map from parameters k to observations y.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;
  virtual Eigen::Index input_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;
  /// Must be safe to call concurrently.
  virtual EvalResult evaluate(const Eigen::VectorXd& k) const = 0;
};

using ForwardModelPtr = std::shared_ptr<const ForwardModel>;

/// F(i, l) = t_i^(l+1): columns t, t^2, ..., t^n (no constant column).
template <typename Derived>
Mat<typename Derived::Scalar> poly_design_matrix(const Eigen::MatrixBase<Derived>& t, Eigen::Index order) {
  using Scalar = typename Derived::Scalar;
  require(order >= 1, "poly_design_matrix: order must be >= 1");
  require(t.size() >= 1, "poly_design_matrix: need at least one point");
  Mat<Scalar> f(t.size(), order);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    Scalar power = t(i);
    for (Eigen::Index l = 0; l < order; ++l) {
      f(i, l) = power;
      power *= t(i);
    }
  }
  return f;
}

/// Diagonal orthogonal projection keeping the first `kept` coordinates.
inline Eigen::MatrixXd projection_matrix(Eigen::Index n, Eigen::Index kept) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  p.topLeftCorner(kept, kept).setIdentity();
  return p;
}

/// G = F P: the design matrix with columns kept+1..n zeroed.
template <typename Derived>
Mat<typename Derived::Scalar> coarse_projection(const Eigen::MatrixBase<Derived>& fine, Eigen::Index kept) {
  if (kept < 1 || kept >= fine.cols())
    throw ContractViolation("coarse_projection: invalid coarsening, need 1 <= p < n");
  Mat<typename Derived::Scalar> g = fine;
  g.rightCols(fine.cols() - kept).setZero();
  return g;
}

/// y = A k.
class LinearModel final : public ForwardModel {
 public:
  explicit LinearModel(Eigen::MatrixXd a) : a_(std::move(a)) {}

  Eigen::Index input_dim() const override { return a_.cols(); }
  Eigen::Index output_dim() const override { return a_.rows(); }
  EvalResult evaluate(const Eigen::VectorXd& k) const override {
    require(k.size() == a_.cols(), "LinearModel: parameter length mismatch");
    return EvalResult(a_ * k);
  }
  const Eigen::MatrixXd& matrix() const noexcept { return a_; }

 private:
  Eigen::MatrixXd a_;
};

/// Fine/coarse polynomial pair on equally spaced points in [t0, t1].
struct PolynomialPair {
  Eigen::VectorXd t;
  Eigen::MatrixXd fine;    // F
  Eigen::MatrixXd coarse;  // G = F P

  static PolynomialPair make(Eigen::Index m, Eigen::Index order, Eigen::Index kept, double t0 = 0.0,
                             double t1 = 1.0) {
    PolynomialPair pair;
    pair.t = Eigen::VectorXd::LinSpaced(m, t0, t1);
    pair.fine = poly_design_matrix(pair.t, order);
    pair.coarse = coarse_projection(pair.fine, kept);
    return pair;
  }
};

}  // namespace bae
