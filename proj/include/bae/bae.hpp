#pragma once

// Approximation-error statistics: ensembles of fine-minus-coarse outputs, their
// mean/covariance, the total-error model, and normality diagnostics.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bae/forward.hpp"
#include "bae/parallel.hpp"
#include "bae/probability.hpp"
#include "bae/sampler.hpp"

namespace bae {

enum class FailurePolicy { replace, drop };
/// prior_based: parameters drawn from the prior. posterior_informed: drawn
/// from a naive-posterior chain.
enum class ErrorSource { prior_based, posterior_informed };

std::string to_string(FailurePolicy p);
std::string to_string(ErrorSource s);
FailurePolicy parse_failure_policy(const std::string& s);
ErrorSource parse_error_source(const std::string& s);

/// Supplies parameter draws for the error ensemble. Called from one thread.
class ParameterSource {
 public:
  virtual ~ParameterSource() = default;
  virtual Eigen::VectorXd next(RngStream& rng) = 0;
};

/// Independent draws from a distribution (e.g. the prior).
class DistributionSource final : public ParameterSource {
 public:
  explicit DistributionSource(std::function<Eigen::VectorXd(RngStream&)> draw) : draw_(std::move(draw)) {}
  Eigen::VectorXd next(RngStream& rng) override { return draw_(rng); }

 private:
  std::function<Eigen::VectorXd(RngStream&)> draw_;
};

/// Uniform draws without replacement from stored chain samples.
class ChainSource final : public ParameterSource {
 public:
  explicit ChainSource(const Chain& chain);
  Eigen::VectorXd next(RngStream& rng) override;
  Eigen::Index remaining() const noexcept { return static_cast<Eigen::Index>(order_.size()) - used_; }

 private:
  const Chain& chain_;
  std::vector<Eigen::Index> order_;
  Eigen::Index used_ = 0;
};

struct DrawFailure {
  long long attempt = 0;  // 0-based draw index
  std::string reason;
};

struct ErrorEnsemble {
  Eigen::MatrixXd errors;      // m x q_succeeded, columns in draw order
  Eigen::MatrixXd parameters;  // d x q_succeeded, matching columns
  long long q_requested = 0;
  long long q_succeeded = 0;
  long long q_failed = 0;
  std::vector<DrawFailure> failures;
};

/// eps_l = f(k_l) - g(k_l) for q parameter draws. With `replace`, failed draws
/// are replaced by fresh ones up to 3q attempts; with `drop` a single round of
/// q attempts is made. Model runs are parallel; results are kept in draw order.
ErrorEnsemble build_error_ensemble(ParameterSource& source, const ForwardModel& fine, const ForwardModel& coarse,
                                   long long q, FailurePolicy policy, RngStream& rng, WorkerPool& pool);

struct ErrorStatistics {
  Eigen::VectorXd epsilon_mean;  // eps*
  Eigen::MatrixXd epsilon_cov;   // Gamma_eps
  long long q_requested = 0;
  long long q_succeeded = 0;
  long long q_failed = 0;
  ErrorSource source = ErrorSource::posterior_informed;
  std::uint64_t seed = 0;
  std::vector<DrawFailure> failures;
};

ErrorStatistics error_statistics(const ErrorEnsemble& ensemble, ErrorSource source, std::uint64_t seed);

/// nu ~ N(e* + eps*, Gamma_e + Gamma_eps), refactorized with the jitter ladder.
GaussianModeld total_error_model(const GaussianModeld& noise, const ErrorStatistics& stats);

struct ComponentNormality {
  double mean = 0;
  double sd = 0;
  double skewness = 0;         // NaN when degenerate
  double excess_kurtosis = 0;  // NaN when degenerate
  bool degenerate = false;
  Eigen::VectorXd qq_theoretical;  // standard-normal quantiles at (i - 0.5)/q
  Eigen::VectorXd qq_empirical;    // sorted standardized values
};

/// Advisory per-component diagnostics; requires at least 8 members.
std::vector<ComponentNormality> normality_diagnostics(const SampleEnsembled& ensemble);

}  // namespace bae
