#pragma once

// Affine-invariant ensemble MCMC with the stretch move, chain storage and
// convergence diagnostics.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bae/probability.hpp"
#include "bae/rng.hpp"

namespace bae {

/// Log target density; may return -infinity to reject. Must be thread-safe.
using LogDensity = std::function<double(const Eigen::VectorXd&)>;

/// Inverse CDF of g(z) proportional to 1/sqrt(z) on [1/a, a].
inline double stretch_z(double a, double u) {
  const double s = (a - 1.0) * u + 1.0;
  return s * s / a;
}

template <typename Scalar>
struct StretchProposal {
  Vec<Scalar> proposal;
  Scalar z;
  Scalar log_hastings;  // (d - 1) log z
};

/// Y = X_c + z (X - X_c) for a given uniform u.
template <typename DerivedX, typename DerivedC>
StretchProposal<typename DerivedX::Scalar> stretch_move(const Eigen::MatrixBase<DerivedX>& walker,
                                                        const Eigen::MatrixBase<DerivedC>& complement, double a,
                                                        double u) {
  using Scalar = typename DerivedX::Scalar;
  require(a > 1.0, "stretch_move: a must exceed 1");
  require(walker.size() == complement.size() && walker.size() >= 1, "stretch_move: dimension mismatch");
  const Scalar z = Scalar(stretch_z(a, u));
  StretchProposal<Scalar> out;
  out.z = z;
  out.proposal = complement + z * (walker - complement);
  out.log_hastings = Scalar(walker.size() - 1) * std::log(z);
  return out;
}

template <typename DerivedX, typename DerivedC>
StretchProposal<typename DerivedX::Scalar> stretch_move(const Eigen::MatrixBase<DerivedX>& walker,
                                                        const Eigen::MatrixBase<DerivedC>& complement, double a,
                                                        RngStream& rng) {
  return stretch_move(walker, complement, a, rng.uniform());
}

struct SamplerConfig {
  int n_walkers = 24;
  int n_steps = 3000;  // total steps per walker, burn-in included
  int burn_in = 1000;  // leading steps discarded
  int thin = 1;        // keep every thin-th post-burn-in step
  double stretch_a = 2.0;
  std::uint64_t seed = 1;
  int workers = 1;

  /// Either explicit starting points (d x n_walkers) or a draw function
  /// (typically the prior). Starts with non-finite log density are redrawn.
  std::optional<Eigen::MatrixXd> init_points;
  std::function<Eigen::VectorXd(RngStream&)> init_sampler;
  int max_init_retries = 100;

  /// Warn when acceptance over `stuck_window` steps falls below this.
  double stuck_threshold = 0.01;
  int stuck_window = 50;

  void validate(Eigen::Index dim) const;
};

/// Post-burn-in samples of one or more ensembles. Column i of `samples` was
/// produced by walker `walker[i]` at retained step `step[i]`.
struct Chain {
  Eigen::MatrixXd samples;  // d x N
  Eigen::VectorXd logpost;  // N
  std::vector<std::uint8_t> accepted;  // whether the move that produced sample i was accepted
  std::vector<int> walker;
  std::vector<int> step;
  int n_walkers = 0;
  std::vector<std::uint64_t> seeds;
  long long burn_in_discarded = 0;  // samples (walker-steps) discarded
  long long proposals = 0;          // over the whole run, burn-in included
  long long accepted_proposals = 0;
  std::vector<std::string> warnings;

  Eigen::Index dim() const noexcept { return samples.rows(); }
  Eigen::Index size() const noexcept { return samples.cols(); }
  double acceptance_rate() const noexcept {
    return proposals > 0 ? double(accepted_proposals) / double(proposals) : 0.0;
  }
  /// Sample indices per walker in step order, walkers in id order.
  std::vector<std::vector<Eigen::Index>> walker_series() const;
};

/// Alternating half-ensemble stretch-move sweeps. Deterministic for a given
/// seed regardless of the number of workers.
Chain run_ensemble(const LogDensity& logpost, const SamplerConfig& cfg);

/// Concatenate already burned-in chains; walker ids are offset so they stay unique.
Chain combine_ensembles(std::span<const Chain> chains);

struct ChainDiagnostics {
  double acceptance_rate = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd autocorr_time;  // integrated, in steps
  Eigen::VectorXd mc_standard_error;
  Eigen::VectorXd split_rhat;
  Eigen::Index samples = 0;
};

/// Walker-averaged integrated autocorrelation time (automatic window, c = 5)
/// and split-R-hat treating each walker as a chain. Requires >= 100 steps per walker.
ChainDiagnostics diagnostics(const Chain& chain);
ChainDiagnostics diagnostics(std::span<const Chain> chains);

/// Integrated autocorrelation time of equal-length series, averaging their
/// normalized autocorrelation functions.
double integrated_autocorr_time(const std::vector<Eigen::VectorXd>& series, double window_c = 5.0);

/// Split-R-hat over a set of equal-length series.
double split_rhat(const std::vector<Eigen::VectorXd>& series);

/// q distinct samples chosen uniformly without replacement.
SampleEnsembled subsample(const Chain& chain, Eigen::Index q, RngStream& rng);

}  // namespace bae
