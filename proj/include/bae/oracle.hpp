#pragma once

// Closed-form posteriors for linear forward models with Gaussian prior and
// noise: naive (coarse model, noise only), BAE-corrected (coarse model, total
// error) and true (fine model, noise only).

#include <Eigen/Dense>

#include <numeric>
#include <vector>

#include "bae/forward.hpp"
#include "bae/probability.hpp"

namespace bae {

/// delta_e^2 ((1 - c) D + c I), D block diagonal with all-ones blocks.
template <typename Scalar = double>
Mat<Scalar> multilevel_noise_cov(Eigen::Index m, const std::vector<Eigen::Index>& block_sizes, Scalar delta_e,
                                 Scalar c) {
  const auto total = std::accumulate(block_sizes.begin(), block_sizes.end(), Eigen::Index{0});
  if (total != m) throw ContractViolation("multilevel_noise_cov: block sizes must sum to m");
  require(c > Scalar(0) && c <= Scalar(1), "multilevel_noise_cov: need 0 < c <= 1");
  Mat<Scalar> d = Mat<Scalar>::Zero(m, m);
  Eigen::Index at = 0;
  for (auto b : block_sizes) {
    d.block(at, at, b, b).setOnes();
    at += b;
  }
  return delta_e * delta_e * ((Scalar(1) - c) * d + c * Mat<Scalar>::Identity(m, m));
}

template <typename Scalar = double>
struct LinearProblem {
  Mat<Scalar> fine;    // F
  Mat<Scalar> coarse;  // G
  GaussianModel<Scalar> prior;
  GaussianModel<Scalar> noise;
  Vec<Scalar> y_obs;

  void validate() const {
    require(fine.rows() == coarse.rows() && fine.cols() == coarse.cols(), "LinearProblem: F and G shapes differ");
    require(prior.dim() == fine.cols(), "LinearProblem: prior dimension must equal parameter count");
    require(noise.dim() == fine.rows() && y_obs.size() == fine.rows(),
            "LinearProblem: noise and data must match the observation count");
  }
};

/// How the BAE total-error covariance is formed. `with_noise` is
/// Gamma_e + (F-G) Gamma_naive (F-G)^T; `error_only` drops Gamma_e.
enum class TotalErrorForm { with_noise, error_only };

namespace detail {

/// Posterior of k for y = H k + e, e ~ noise, k ~ prior, as the solution of the
/// whitened stacked least-squares problem [L_e^-1 H; L_k^-1] k ~ [L_e^-1 (y - e*); L_k^-1 k*].
template <typename Scalar>
GaussianModel<Scalar> linear_gaussian_posterior(const Mat<Scalar>& h, const GaussianModel<Scalar>& noise,
                                                const GaussianModel<Scalar>& prior, const Vec<Scalar>& y) {
  if (noise.semidefinite() || prior.semidefinite())
    throw DegenerateCovarianceError("linear_gaussian_posterior: singular noise or prior covariance");
  const Eigen::Index m = h.rows();
  const Eigen::Index n = h.cols();
  const auto le = noise.factor().template triangularView<Eigen::Lower>();
  const auto lk = prior.factor().template triangularView<Eigen::Lower>();
  Mat<Scalar> j(m + n, n);
  j.topRows(m) = le.solve(h);
  j.bottomRows(n) = lk.solve(Mat<Scalar>::Identity(n, n));
  Vec<Scalar> rhs(m + n);
  rhs.head(m) = le.solve(y - noise.mean());
  rhs.tail(n) = lk.solve(prior.mean());

  Eigen::HouseholderQR<Mat<Scalar>> qr(j);
  const Mat<Scalar> r = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  const Vec<Scalar> qtb = (qr.householderQ().transpose() * rhs).head(n);
  const auto ru = r.template triangularView<Eigen::Upper>();
  Vec<Scalar> mean = ru.solve(qtb);
  // cov = (R^T R)^-1 = R^-1 R^-T
  const Mat<Scalar> rinv = ru.solve(Mat<Scalar>::Identity(n, n));
  return GaussianModel<Scalar>(std::move(mean), rinv * rinv.transpose());
}

}  // namespace detail

template <typename Scalar = double>
struct AnalyticPosteriors {
  GaussianModel<Scalar> naive;
  GaussianModel<Scalar> bae;
  GaussianModel<Scalar> truth;
  Vec<Scalar> nu_star;
  Mat<Scalar> gamma_nu;
};

/// Total-error model implied by the naive posterior: nu* = e* + (F-G) k_naive,
/// Gamma_nu = [Gamma_e +] (F-G) Gamma_naive (F-G)^T.
template <typename Scalar>
GaussianModel<Scalar> analytic_total_error(const LinearProblem<Scalar>& problem, const GaussianModel<Scalar>& naive,
                                           TotalErrorForm form = TotalErrorForm::with_noise) {
  const Mat<Scalar> gap = problem.fine - problem.coarse;
  Vec<Scalar> nu_star = problem.noise.mean() + gap * naive.mean();
  Mat<Scalar> gamma_nu = gap * naive.covariance() * gap.transpose();
  if (form == TotalErrorForm::with_noise) gamma_nu += problem.noise.covariance();
  return GaussianModel<Scalar>(std::move(nu_star), gamma_nu);
}

template <typename Scalar>
AnalyticPosteriors<Scalar> analytic_posteriors(const LinearProblem<Scalar>& problem,
                                               TotalErrorForm form = TotalErrorForm::with_noise) {
  problem.validate();
  AnalyticPosteriors<Scalar> out;
  out.naive = detail::linear_gaussian_posterior(problem.coarse, problem.noise, problem.prior, problem.y_obs);
  const auto total = analytic_total_error(problem, out.naive, form);
  out.nu_star = total.mean();
  out.gamma_nu = total.covariance();
  out.bae = detail::linear_gaussian_posterior(problem.coarse, total, problem.prior, problem.y_obs);
  out.truth = detail::linear_gaussian_posterior(problem.fine, problem.noise, problem.prior, problem.y_obs);
  return out;
}

enum class PosteriorVariant { naive, bae, truth };

/// MAP estimate from the normal equations
/// (H^T S^-1 H + P^-1) k = H^T S^-1 (y - s*) + P^-1 k*, an independent route to
/// the posterior mean computed by analytic_posteriors.
template <typename Scalar>
Vec<Scalar> map_estimate(const LinearProblem<Scalar>& problem, PosteriorVariant variant,
                         TotalErrorForm form = TotalErrorForm::with_noise) {
  problem.validate();
  const Mat<Scalar>& h = variant == PosteriorVariant::truth ? problem.fine : problem.coarse;
  const GaussianModel<Scalar>* noise = &problem.noise;
  GaussianModel<Scalar> total;
  if (variant == PosteriorVariant::bae) {
    const auto naive = detail::linear_gaussian_posterior(problem.coarse, problem.noise, problem.prior, problem.y_obs);
    total = analytic_total_error(problem, naive, form);
    noise = &total;
  }
  const Eigen::LLT<Mat<Scalar>> noise_llt(noise->covariance() +
                                          noise->jitter_used() * Mat<Scalar>::Identity(h.rows(), h.rows()));
  const Eigen::LLT<Mat<Scalar>> prior_llt(problem.prior.covariance());
  const Mat<Scalar> a = h.transpose() * noise_llt.solve(h) + prior_llt.solve(Mat<Scalar>::Identity(h.cols(), h.cols()));
  const Vec<Scalar> b =
      h.transpose() * noise_llt.solve(problem.y_obs - noise->mean()) + prior_llt.solve(problem.prior.mean());
  const Eigen::LDLT<Mat<Scalar>> normal(symmetrized(a));
  if (normal.info() != Eigen::Success) throw DegenerateCovarianceError("map_estimate: singular normal equations");
  return normal.solve(b);
}

/// Polynomial curve-fitting setup: m points on [0, 1], order-n fine model,
/// order-p coarse model, prior N(k*, delta_k^2 I), multi-level noise.
struct CurveFitSettings {
  Eigen::Index m = 30;
  Eigen::Index order = 2;
  Eigen::Index kept = 1;
  Eigen::VectorXd prior_mean = Eigen::Vector2d(1.0, 1.0);
  double delta_k = 1.0;
  double delta_e = 1.2;
  double c = 0.001;
  std::vector<Eigen::Index> blocks = {10, 10, 10};
  Eigen::VectorXd truth = Eigen::Vector2d(0.2, 2.0);
  std::uint64_t seed = 2024;
  /// Derive delta_e as 30% of max(F k_true) instead of the literal value.
  bool noise_from_truth = false;
};

struct CurveFitSetup {
  PolynomialPair pair;
  LinearProblem<double> problem;
  Eigen::VectorXd y_clean;
};

inline CurveFitSetup make_curve_fit(const CurveFitSettings& s) {
  require(s.prior_mean.size() == s.order && s.truth.size() == s.order, "make_curve_fit: vector lengths must equal order");
  CurveFitSetup out;
  out.pair = PolynomialPair::make(s.m, s.order, s.kept);
  out.y_clean = out.pair.fine * s.truth;
  const double delta_e = s.noise_from_truth ? 0.3 * out.y_clean.maxCoeff() : s.delta_e;
  const GaussianModel<double> noise(Eigen::VectorXd::Zero(s.m), multilevel_noise_cov<double>(s.m, s.blocks, delta_e, s.c));
  RngStream rng = RngStream(s.seed).substream("curve-fit-noise");
  const auto draw = sample_gaussian(noise, 1, rng);
  out.problem = LinearProblem<double>{
      out.pair.fine, out.pair.coarse,
      GaussianModel<double>(s.prior_mean, s.delta_k * s.delta_k * Eigen::MatrixXd::Identity(s.order, s.order)), noise,
      out.y_clean + draw.member(0)};
  return out;
}

}  // namespace bae
