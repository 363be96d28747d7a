#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bae/forward.hpp"
#include "bae/parallel.hpp"
#include "bae/probability.hpp"
#include "bae/sampler.hpp"

namespace bae {

class PriorSpec {
 public:
  enum class Kind { gaussian, uniform_box };

  static PriorSpec gaussian(GaussianModeld model);
  static PriorSpec uniform_box(Eigen::VectorXd lower, Eigen::VectorXd upper);

  Kind kind() const noexcept { return kind_; }
  Eigen::Index dim() const noexcept;
  /// -infinity outside the support.
  double log_density(const Eigen::VectorXd& k) const;
  bool in_support(const Eigen::VectorXd& k) const;
  Eigen::VectorXd sample(RngStream& rng) const;

  const GaussianModeld& gaussian_model() const;
  const Eigen::VectorXd& lower() const noexcept { return lower_; }
  const Eigen::VectorXd& upper() const noexcept { return upper_; }
  Eigen::VectorXd mean() const;
  Eigen::VectorXd sd() const;

 private:
  Kind kind_ = Kind::gaussian;
  GaussianModeld gaussian_;
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
  double log_volume_ = 0;
};

/// Counts of forward-model runs and failures seen by a log posterior.
struct FailureTelemetry {
  std::atomic<long long> evaluations{0};
  std::atomic<long long> failures{0};
  std::mutex mutex;
  std::map<std::string, long long> reasons;

  void record_failure(const std::string& reason);
};

struct InverseProblem {
  ForwardModelPtr model;  // coarse model g
  PriorSpec prior;
  GaussianModeld noise;  // e ~ N(e*, Gamma_e)
  Eigen::VectorXd y_obs;
  std::optional<GaussianModeld> total_error;  // nu ~ N(nu*, Gamma_nu)

  void validate() const;
};

/// log N(y_obs - g(k); likelihood) + log prior(k). Outside the prior support,
/// or when the model fails, the value is -infinity (failures are counted).
class LogPosterior {
 public:
  LogPosterior(ForwardModelPtr model, PriorSpec prior, GaussianModeld likelihood, Eigen::VectorXd y_obs);

  double operator()(const Eigen::VectorXd& k) const;
  /// Log-likelihood part only; -infinity on model failure.
  double log_likelihood(const Eigen::VectorXd& k) const;

  /// L^-1 (y_obs - g(k) - mean) for the likelihood factor L; empty on model failure.
  std::optional<Eigen::VectorXd> whitened_residual(const Eigen::VectorXd& k) const;

  const std::shared_ptr<FailureTelemetry>& telemetry() const noexcept { return telemetry_; }
  const PriorSpec& prior() const noexcept { return prior_; }
  const GaussianModeld& likelihood() const noexcept { return likelihood_; }

 private:
  ForwardModelPtr model_;
  PriorSpec prior_;
  GaussianModeld likelihood_;
  Eigen::VectorXd y_obs_;
  std::shared_ptr<FailureTelemetry> telemetry_ = std::make_shared<FailureTelemetry>();
};

/// Coarse model with the noise-only likelihood.
LogPosterior naive_log_posterior(const InverseProblem& problem);
/// Coarse model with the total-error likelihood; requires problem.total_error.
LogPosterior bae_log_posterior(const InverseProblem& problem);

struct ModeSearchSettings {
  int starts = 32;             // local searches, each from a prior draw
  int max_evaluations = 4000;  // per local search
};

/// Local maxima of the log posterior, best first (one column per start).
struct ModeSearchResult {
  Eigen::MatrixXd points;
  Eigen::VectorXd logpost;
};

/// Multi-start Levenberg-Marquardt on the whitened residual plus a prior
/// penalty. Uniform-box priors are handled by clamping the model argument and
/// penalizing the excursion.
ModeSearchResult find_modes(const LogPosterior& target, const ModeSearchSettings& settings, RngStream& rng,
                            WorkerPool& pool);

/// n points drawn from N(centre, (scale * prior sd)^2) and reflected into the
/// prior support; column 0 is the centre itself.
Eigen::MatrixXd ball_around(const Eigen::VectorXd& centre, const PriorSpec& prior, double scale, int n, RngStream& rng);

struct SyntheticData {
  Eigen::VectorXd y_clean;
  Eigen::VectorXd y_obs;
};

/// y_obs = f(truth) + one noise draw. Throws if the model fails at the truth.
SyntheticData synthesize_data(const Eigen::VectorXd& truth, const ForwardModel& fine, const GaussianModeld& noise,
                              RngStream& rng);

/// Linear-interpolation (type 7) quantile of sorted data.
double sorted_quantile(const std::vector<double>& sorted, double p);

inline const std::vector<double> kDefaultPredictiveLevels = {0.025, 0.25, 0.5, 0.75, 0.975};

struct PredictiveTable {
  std::vector<double> levels;
  Eigen::MatrixXd quantiles;  // observations x levels
  Eigen::MatrixXd curves;     // observations x successful draws
  long long draws = 0;
  long long failures = 0;
};

/// Runs the model on n_draws parameters chosen without replacement from the
/// chain and summarizes the predictions per observation point. When
/// `additive` is given, one draw from it is added to each curve (measurement
/// noise, approximation error, or both).
PredictiveTable posterior_predictive(const Chain& chain, const ForwardModel& model, Eigen::Index n_draws,
                                     const std::vector<double>& levels, RngStream& rng, WorkerPool& pool,
                                     const GaussianModeld* additive = nullptr);

struct CredibleInterval {
  double level = 0;
  double lower = 0;
  double upper = 0;
  bool contains_truth = false;
};

struct ParameterFeasibility {
  double truth = 0;
  double mean = 0;
  double sd = 0;
  std::vector<CredibleInterval> intervals;
};

inline const std::vector<double> kDefaultFeasibilityLevels = {0.95, 0.99};

/// Central credible intervals from marginal empirical quantiles.
std::vector<ParameterFeasibility> feasibility_summary(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth,
                                                      const std::vector<double>& levels = kDefaultFeasibilityLevels);
inline std::vector<ParameterFeasibility> feasibility_summary(const Chain& chain, const Eigen::VectorXd& truth,
                                                             const std::vector<double>& levels = kDefaultFeasibilityLevels) {
  return feasibility_summary(chain.samples, truth, levels);
}

}  // namespace bae
