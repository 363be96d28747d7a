#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace bae::slice::detail {

/// Square band matrix with equal lower/upper bandwidth, LU-factorized in place
/// without pivoting. Only used for the diagonally dominant M-matrices produced
/// by the finite-volume assembly, for which pivoting is unnecessary.
class BandMatrix {
 public:
  BandMatrix(Eigen::Index n, Eigen::Index band)
      : n_(n), band_(band), width_(2 * band + 1), data_(static_cast<std::size_t>(n * width_), 0.0) {}

  double& operator()(Eigen::Index i, Eigen::Index j) { return data_[i * width_ + (j - i + band_)]; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return data_[i * width_ + (j - i + band_)]; }

  Eigen::Index size() const noexcept { return n_; }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - band_);
      const Eigen::Index hi = std::min<Eigen::Index>(n_ - 1, i + band_);
      double s = 0;
      for (Eigen::Index j = lo; j <= hi; ++j) s += (*this)(i, j) * x(j);
      y(i) = s;
    }
    return y;
  }

  /// Returns false on a zero or non-finite pivot.
  bool factorize() {
    for (Eigen::Index k = 0; k < n_; ++k) {
      const double pivot = (*this)(k, k);
      if (!(std::abs(pivot) > 0.0) || !std::isfinite(pivot)) return false;
      const Eigen::Index last = std::min<Eigen::Index>(n_ - 1, k + band_);
      for (Eigen::Index i = k + 1; i <= last; ++i) {
        double& lik = (*this)(i, k);
        if (lik == 0.0) continue;
        lik /= pivot;
        for (Eigen::Index j = k + 1; j <= last; ++j) (*this)(i, j) -= lik * (*this)(k, j);
      }
    }
    return true;
  }

  /// Requires a prior successful factorize().
  Eigen::VectorXd solve(Eigen::VectorXd b) const {
    for (Eigen::Index i = 0; i < n_; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - band_);
      double s = b(i);
      for (Eigen::Index j = lo; j < i; ++j) s -= (*this)(i, j) * b(j);
      b(i) = s;
    }
    for (Eigen::Index i = n_ - 1; i >= 0; --i) {
      const Eigen::Index hi = std::min<Eigen::Index>(n_ - 1, i + band_);
      double s = b(i);
      for (Eigen::Index j = i + 1; j <= hi; ++j) s -= (*this)(i, j) * b(j);
      b(i) = s / (*this)(i, i);
    }
    return b;
  }

 private:
  Eigen::Index n_;
  Eigen::Index band_;
  Eigen::Index width_;
  std::vector<double> data_;
};

struct LinearSolve {
  bool ok = false;
  double relative_residual = 0;
  Eigen::VectorXd x;
};

/// Direct solve with up to two steps of iterative refinement; succeeds when
/// ||b - A x|| <= tolerance * ||b||.
inline LinearSolve solve_banded(const BandMatrix& a, const Eigen::VectorXd& b, double tolerance) {
  LinearSolve out;
  BandMatrix lu = a;
  if (!lu.factorize()) return out;
  const double scale = b.norm();
  out.x = lu.solve(b);
  for (int pass = 0;; ++pass) {
    const Eigen::VectorXd r = b - a.multiply(out.x);
    out.relative_residual = scale > 0 ? r.norm() / scale : r.norm();
    if (!out.x.allFinite()) return out;
    if (out.relative_residual <= tolerance) {
      out.ok = true;
      return out;
    }
    if (pass == 2) return out;
    out.x += lu.solve(r);
  }
}

}  // namespace bae::slice::detail
