#include "bae/posterior.hpp"

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace bae {

namespace {
constexpr double kMinusInf = -std::numeric_limits<double>::infinity();
}

PriorSpec PriorSpec::gaussian(GaussianModeld model) {
  PriorSpec p;
  p.kind_ = Kind::gaussian;
  p.gaussian_ = std::move(model);
  return p;
}

PriorSpec PriorSpec::uniform_box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() != upper.size()) throw ContractViolation("uniform_box: bound lengths differ");
  if (!lower.allFinite() || !upper.allFinite() || (lower.array() >= upper.array()).any())
    throw ConfigError("uniform_box: bounds must be finite with lower < upper");
  PriorSpec p;
  p.kind_ = Kind::uniform_box;
  p.log_volume_ = (upper - lower).array().log().sum();
  p.lower_ = std::move(lower);
  p.upper_ = std::move(upper);
  return p;
}

Eigen::Index PriorSpec::dim() const noexcept { return kind_ == Kind::gaussian ? gaussian_.dim() : lower_.size(); }

bool PriorSpec::in_support(const Eigen::VectorXd& k) const {
  if (k.size() != dim() || !k.allFinite()) return false;
  if (kind_ == Kind::gaussian) return true;
  return (k.array() >= lower_.array()).all() && (k.array() <= upper_.array()).all();
}

double PriorSpec::log_density(const Eigen::VectorXd& k) const {
  if (!in_support(k)) return kMinusInf;
  if (kind_ == Kind::gaussian) return gaussian_logpdf(k, gaussian_);
  return -log_volume_;
}

Eigen::VectorXd PriorSpec::sample(RngStream& rng) const {
  if (kind_ == Kind::gaussian) return sample_gaussian(gaussian_, 1, rng).member(0);
  Eigen::VectorXd k(lower_.size());
  for (Eigen::Index i = 0; i < k.size(); ++i) k(i) = lower_(i) + (upper_(i) - lower_(i)) * rng.uniform();
  return k;
}

const GaussianModeld& PriorSpec::gaussian_model() const {
  if (kind_ != Kind::gaussian) throw ContractViolation("PriorSpec: not a Gaussian prior");
  return gaussian_;
}

Eigen::VectorXd PriorSpec::mean() const {
  return kind_ == Kind::gaussian ? gaussian_.mean() : Eigen::VectorXd((lower_ + upper_) / 2.0);
}

Eigen::VectorXd PriorSpec::sd() const {
  if (kind_ == Kind::gaussian) return gaussian_.covariance().diagonal().cwiseSqrt();
  return (upper_ - lower_) / std::sqrt(12.0);
}

void FailureTelemetry::record_failure(const std::string& reason) {
  ++failures;
  std::lock_guard lock(mutex);
  ++reasons[reason];
}

void InverseProblem::validate() const {
  require(model != nullptr, "InverseProblem: no model");
  require(prior.dim() == model->input_dim(), "InverseProblem: prior dimension must equal model input dimension");
  require(noise.dim() == model->output_dim() && y_obs.size() == model->output_dim(),
          "InverseProblem: noise and data must match the model output dimension");
  if (total_error)
    require(total_error->dim() == model->output_dim(), "InverseProblem: total error must match the output dimension");
}

LogPosterior::LogPosterior(ForwardModelPtr model, PriorSpec prior, GaussianModeld likelihood, Eigen::VectorXd y_obs)
    : model_(std::move(model)), prior_(std::move(prior)), likelihood_(std::move(likelihood)), y_obs_(std::move(y_obs)) {
  require(model_ != nullptr, "LogPosterior: no model");
  require(likelihood_.dim() == y_obs_.size(), "LogPosterior: likelihood dimension must equal the data length");
}

double LogPosterior::log_likelihood(const Eigen::VectorXd& k) const {
  ++telemetry_->evaluations;
  const auto y = model_->evaluate(k);
  if (!y) {
    telemetry_->record_failure(y.reason());
    return kMinusInf;
  }
  return gaussian_logpdf(Eigen::VectorXd(y_obs_ - y.value()), likelihood_);
}

std::optional<Eigen::VectorXd> LogPosterior::whitened_residual(const Eigen::VectorXd& k) const {
  ++telemetry_->evaluations;
  const auto y = model_->evaluate(k);
  if (!y) {
    telemetry_->record_failure(y.reason());
    return std::nullopt;
  }
  return likelihood_.whiten(Eigen::VectorXd(y_obs_ - y.value()));
}

double LogPosterior::operator()(const Eigen::VectorXd& k) const {
  const double lp = prior_.log_density(k);
  if (!std::isfinite(lp)) return kMinusInf;
  return lp + log_likelihood(k);
}

LogPosterior naive_log_posterior(const InverseProblem& problem) {
  problem.validate();
  return LogPosterior(problem.model, problem.prior, problem.noise, problem.y_obs);
}

LogPosterior bae_log_posterior(const InverseProblem& problem) {
  problem.validate();
  if (!problem.total_error) throw ContractViolation("bae_log_posterior: problem has no total-error model");
  return LogPosterior(problem.model, problem.prior, *problem.total_error, problem.y_obs);
}

namespace {

constexpr double kFailedResidual = 1e3;
constexpr double kBoxPenalty = 10.0;

// Residual functor for Eigen's Levenberg-Marquardt: whitened data misfit
// followed by the prior terms. 0.5 |r|^2 is the negative log posterior up to a
// constant inside the prior support.
struct PosteriorResidual {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const LogPosterior* target;
  Eigen::Index d;
  Eigen::Index m;

  int inputs() const { return static_cast<int>(d); }
  int values() const { return static_cast<int>(m + d); }

  int operator()(const Eigen::VectorXd& k, Eigen::VectorXd& r) const {
    const PriorSpec& prior = target->prior();
    r.resize(m + d);
    Eigen::VectorXd arg = k;
    if (prior.kind() == PriorSpec::Kind::uniform_box) {
      arg = k.cwiseMax(prior.lower()).cwiseMin(prior.upper());
      r.tail(d) = kBoxPenalty * (k - arg);
    } else {
      r.tail(d) = prior.gaussian_model().whiten(k);
    }
    const auto w = target->whitened_residual(arg);
    if (w)
      r.head(m) = *w;
    else
      r.head(m).setConstant(kFailedResidual);
    return 0;
  }
};

}  // namespace

ModeSearchResult find_modes(const LogPosterior& target, const ModeSearchSettings& settings, RngStream& rng,
                            WorkerPool& pool) {
  require(settings.starts >= 1, "find_modes: need at least one start");
  const PriorSpec& prior = target.prior();
  const Eigen::Index d = prior.dim();
  std::vector<Eigen::VectorXd> points(static_cast<std::size_t>(settings.starts));
  for (auto& p : points) p = prior.sample(rng);
  std::vector<double> values(points.size());

  pool.parallel_for(points.size(), [&](std::size_t s) {
    PosteriorResidual fn{&target, d, target.likelihood().dim()};
    // Step about cbrt(machine epsilon) relative, the usual choice for central differences.
    Eigen::NumericalDiff<PosteriorResidual, Eigen::Central> diff(fn, 4e-11);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<PosteriorResidual, Eigen::Central>> lm(diff);
    lm.parameters.maxfev = settings.max_evaluations;
    lm.parameters.xtol = 1e-12;
    lm.parameters.ftol = 1e-12;
    Eigen::VectorXd k = points[s];
    lm.minimize(k);
    if (prior.kind() == PriorSpec::Kind::uniform_box) k = k.cwiseMax(prior.lower()).cwiseMin(prior.upper());
    points[s] = k;
    values[s] = target(k);
  });

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double va = std::isnan(values[a]) ? kMinusInf : values[a];
    const double vb = std::isnan(values[b]) ? kMinusInf : values[b];
    return va > vb;
  });
  ModeSearchResult out;
  out.points.resize(d, settings.starts);
  out.logpost.resize(settings.starts);
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.points.col(static_cast<Eigen::Index>(i)) = points[order[i]];
    out.logpost(static_cast<Eigen::Index>(i)) = values[order[i]];
  }
  if (!std::isfinite(out.logpost(0))) throw Error("find_modes: no start reached a finite log posterior");
  return out;
}

Eigen::MatrixXd ball_around(const Eigen::VectorXd& centre, const PriorSpec& prior, double scale, int n,
                            RngStream& rng) {
  require(centre.size() == prior.dim(), "ball_around: centre dimension must equal the prior dimension");
  require(n >= 1 && scale > 0, "ball_around: need n >= 1 and a positive scale");
  const Eigen::VectorXd sd = scale * prior.sd();
  Eigen::MatrixXd out(centre.size(), n);
  out.col(0) = centre;
  for (int j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < centre.size(); ++i) {
      double v = centre(i) + sd(i) * rng.normal();
      if (prior.kind() == PriorSpec::Kind::uniform_box) {
        const double lo = prior.lower()(i), hi = prior.upper()(i);
        if (v < lo) v = std::min(hi, 2 * lo - v);
        if (v > hi) v = std::max(lo, 2 * hi - v);
      }
      out(i, j) = v;
    }
  }
  return out;
}

SyntheticData synthesize_data(const Eigen::VectorXd& truth, const ForwardModel& fine, const GaussianModeld& noise,
                              RngStream& rng) {
  require(noise.dim() == fine.output_dim(), "synthesize_data: noise dimension must equal model output dimension");
  const auto y = fine.evaluate(truth);
  if (!y) throw Error("synthesize_data: fine model failed at the truth: " + y.reason());
  SyntheticData out;
  out.y_clean = y.value();
  out.y_obs = out.y_clean + sample_gaussian(noise, 1, rng).member(0);
  return out;
}

double sorted_quantile(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), "sorted_quantile: empty data");
  require(p >= 0.0 && p <= 1.0, "sorted_quantile: level outside [0, 1]");
  const double h = p * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

PredictiveTable posterior_predictive(const Chain& chain, const ForwardModel& model, Eigen::Index n_draws,
                                     const std::vector<double>& levels, RngStream& rng, WorkerPool& pool,
                                     const GaussianModeld* additive) {
  require(n_draws >= 1 && n_draws <= chain.size(), "posterior_predictive: n_draws must be in [1, chain size]");
  const auto params = subsample(chain, n_draws, rng);
  std::vector<EvalResult> runs(static_cast<std::size_t>(n_draws), EvalResult::failure("not run"));
  pool.parallel_for(static_cast<std::size_t>(n_draws),
                    [&](std::size_t i) { runs[i] = model.evaluate(params.member(static_cast<Eigen::Index>(i))); });

  PredictiveTable table;
  table.levels = levels;
  table.draws = n_draws;
  std::vector<const Eigen::VectorXd*> ok;
  for (const auto& r : runs) {
    if (r)
      ok.push_back(&r.value());
    else
      ++table.failures;
  }
  if (double(table.failures) > 0.2 * double(n_draws)) {
    std::ostringstream msg;
    msg << "posterior_predictive: " << table.failures << " of " << n_draws << " model runs failed";
    throw Error(msg.str());
  }
  const Eigen::Index m = model.output_dim();
  table.curves.resize(m, static_cast<Eigen::Index>(ok.size()));
  RngStream noise_rng = rng.substream("predictive-additive");
  for (std::size_t j = 0; j < ok.size(); ++j) {
    table.curves.col(static_cast<Eigen::Index>(j)) = *ok[j];
    if (additive) table.curves.col(static_cast<Eigen::Index>(j)) += sample_gaussian(*additive, 1, noise_rng).member(0);
  }
  table.quantiles.resize(m, static_cast<Eigen::Index>(levels.size()));
  std::vector<double> row(ok.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < ok.size(); ++j) row[j] = table.curves(i, static_cast<Eigen::Index>(j));
    std::sort(row.begin(), row.end());
    for (std::size_t l = 0; l < levels.size(); ++l)
      table.quantiles(i, static_cast<Eigen::Index>(l)) = sorted_quantile(row, levels[l]);
  }
  return table;
}

std::vector<ParameterFeasibility> feasibility_summary(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth,
                                                      const std::vector<double>& levels) {
  require(samples.rows() == truth.size(), "feasibility_summary: truth length must equal the parameter dimension");
  require(samples.cols() >= 1, "feasibility_summary: no samples");
  std::vector<ParameterFeasibility> out;
  std::vector<double> row(static_cast<std::size_t>(samples.cols()));
  for (Eigen::Index k = 0; k < samples.rows(); ++k) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) row[static_cast<std::size_t>(j)] = samples(k, j);
    std::sort(row.begin(), row.end());
    ParameterFeasibility f;
    f.truth = truth(k);
    f.mean = samples.row(k).mean();
    f.sd = samples.cols() > 1
               ? std::sqrt((samples.row(k).array() - f.mean).square().sum() / double(samples.cols() - 1))
               : 0.0;
    for (double level : levels) {
      CredibleInterval ci;
      ci.level = level;
      ci.lower = sorted_quantile(row, (1.0 - level) / 2.0);
      ci.upper = sorted_quantile(row, (1.0 + level) / 2.0);
      ci.contains_truth = ci.lower <= f.truth && f.truth <= ci.upper;
      f.intervals.push_back(ci);
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace bae
