#include "bae/bae.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

namespace bae {

std::string to_string(FailurePolicy p) { return p == FailurePolicy::replace ? "replace" : "drop"; }

std::string to_string(ErrorSource s) {
  return s == ErrorSource::prior_based ? "prior-based" : "posterior-informed";
}

FailurePolicy parse_failure_policy(const std::string& s) {
  if (s == "replace") return FailurePolicy::replace;
  if (s == "drop") return FailurePolicy::drop;
  throw ConfigError("unknown failure policy '" + s + "' (expected replace or drop)");
}

ErrorSource parse_error_source(const std::string& s) {
  if (s == "prior-based") return ErrorSource::prior_based;
  if (s == "posterior-informed") return ErrorSource::posterior_informed;
  throw ConfigError("unknown error source '" + s + "' (expected prior-based or posterior-informed)");
}

ChainSource::ChainSource(const Chain& chain) : chain_(chain), order_(static_cast<std::size_t>(chain.size())) {
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
}

Eigen::VectorXd ChainSource::next(RngStream& rng) {
  const auto n = static_cast<Eigen::Index>(order_.size());
  if (used_ >= n) throw BudgetExhaustedError("ChainSource: chain exhausted", 1.0);
  const auto j = used_ + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n - used_)));
  std::swap(order_[static_cast<std::size_t>(used_)], order_[static_cast<std::size_t>(j)]);
  return chain_.samples.col(order_[static_cast<std::size_t>(used_++)]);
}

ErrorEnsemble build_error_ensemble(ParameterSource& source, const ForwardModel& fine, const ForwardModel& coarse,
                                   long long q, FailurePolicy policy, RngStream& rng, WorkerPool& pool) {
  require(q >= 1, "build_error_ensemble: q must be positive");
  require(fine.output_dim() == coarse.output_dim(), "build_error_ensemble: fine and coarse output sizes differ");
  require(fine.input_dim() == coarse.input_dim(), "build_error_ensemble: fine and coarse input sizes differ");
  const Eigen::Index m = fine.output_dim();
  const long long cap = policy == FailurePolicy::replace ? 3 * q : q;

  ErrorEnsemble out;
  out.q_requested = q;
  std::vector<Eigen::VectorXd> errors;
  std::vector<Eigen::VectorXd> params;
  long long attempts = 0;
  while (static_cast<long long>(errors.size()) < q && attempts < cap) {
    const long long batch = std::min(q - static_cast<long long>(errors.size()), cap - attempts);
    std::vector<Eigen::VectorXd> draws;
    draws.reserve(static_cast<std::size_t>(batch));
    for (long long i = 0; i < batch; ++i) draws.push_back(source.next(rng));

    std::vector<EvalResult> diffs(static_cast<std::size_t>(batch), EvalResult::failure("not run"));
    pool.parallel_for(static_cast<std::size_t>(batch), [&](std::size_t i) {
      const auto f = fine.evaluate(draws[i]);
      if (!f) {
        diffs[i] = EvalResult::failure("fine: " + f.reason());
        return;
      }
      const auto g = coarse.evaluate(draws[i]);
      if (!g) {
        diffs[i] = EvalResult::failure("coarse: " + g.reason());
        return;
      }
      diffs[i] = EvalResult(f.value() - g.value());
    });
    for (long long i = 0; i < batch; ++i) {
      const auto& d = diffs[static_cast<std::size_t>(i)];
      if (d) {
        errors.push_back(d.value());
        params.push_back(draws[static_cast<std::size_t>(i)]);
      } else {
        out.failures.push_back({attempts + i, d.reason()});
      }
    }
    attempts += batch;
    if (policy == FailurePolicy::drop) break;
  }
  out.q_succeeded = static_cast<long long>(errors.size());
  out.q_failed = static_cast<long long>(out.failures.size());
  const bool short_of_budget = policy == FailurePolicy::replace ? out.q_succeeded < q : out.q_succeeded < 2;
  if (short_of_budget) {
    std::ostringstream msg;
    msg << "build_error_ensemble: " << out.q_succeeded << " of " << q << " draws succeeded after " << attempts
        << " attempts (failure rate " << double(out.q_failed) / double(std::max(1LL, attempts)) << ")";
    throw BudgetExhaustedError(msg.str(), double(out.q_failed) / double(std::max(1LL, attempts)));
  }
  out.errors.resize(m, out.q_succeeded);
  out.parameters.resize(fine.input_dim(), out.q_succeeded);
  for (long long i = 0; i < out.q_succeeded; ++i) {
    out.errors.col(i) = errors[static_cast<std::size_t>(i)];
    out.parameters.col(i) = params[static_cast<std::size_t>(i)];
  }
  return out;
}

ErrorStatistics error_statistics(const ErrorEnsemble& ensemble, ErrorSource source, std::uint64_t seed) {
  const auto moments = estimate_moments(SampleEnsembled(ensemble.errors));
  ErrorStatistics s;
  s.epsilon_mean = moments.mean;
  s.epsilon_cov = moments.covariance;
  s.q_requested = ensemble.q_requested;
  s.q_succeeded = ensemble.q_succeeded;
  s.q_failed = ensemble.q_failed;
  s.source = source;
  s.seed = seed;
  s.failures = ensemble.failures;
  return s;
}

GaussianModeld total_error_model(const GaussianModeld& noise, const ErrorStatistics& stats) {
  if (stats.epsilon_mean.size() != noise.dim() || stats.epsilon_cov.rows() != noise.dim())
    throw ContractViolation("total_error_model: error statistics do not match the noise dimension");
  return GaussianModeld(noise.mean() + stats.epsilon_mean, noise.covariance() + stats.epsilon_cov);
}

std::vector<ComponentNormality> normality_diagnostics(const SampleEnsembled& ensemble) {
  const Eigen::Index q = ensemble.count();
  require(q >= 8, "normality_diagnostics: need at least 8 members");
  const boost::math::normal standard;
  Eigen::VectorXd theoretical(q);
  for (Eigen::Index i = 0; i < q; ++i) theoretical(i) = boost::math::quantile(standard, (double(i) + 0.5) / double(q));

  std::vector<ComponentNormality> out;
  for (Eigen::Index c = 0; c < ensemble.dim(); ++c) {
    const Eigen::VectorXd x = ensemble.samples().row(c).transpose();
    ComponentNormality n;
    n.mean = x.mean();
    const Eigen::ArrayXd dev = x.array() - n.mean;
    const double m2 = dev.square().mean();
    n.sd = std::sqrt(dev.square().sum() / double(q - 1));
    n.qq_theoretical = theoretical;
    n.degenerate = !(m2 > 1e-24 * std::max(1.0, n.mean * n.mean));
    if (n.degenerate) {
      n.skewness = n.excess_kurtosis = std::numeric_limits<double>::quiet_NaN();
      n.qq_empirical = Eigen::VectorXd::Zero(q);
    } else {
      n.skewness = dev.cube().mean() / std::pow(m2, 1.5);
      n.excess_kurtosis = dev.square().square().mean() / (m2 * m2) - 3.0;
      std::vector<double> z(static_cast<std::size_t>(q));
      for (Eigen::Index i = 0; i < q; ++i) z[static_cast<std::size_t>(i)] = dev(i) / n.sd;
      std::sort(z.begin(), z.end());
      n.qq_empirical = Eigen::Map<const Eigen::VectorXd>(z.data(), q);
    }
    out.push_back(std::move(n));
  }
  return out;
}

}  // namespace bae
