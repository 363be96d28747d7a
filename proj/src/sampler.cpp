#include "bae/sampler.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "bae/parallel.hpp"

namespace bae {

void SamplerConfig::validate(Eigen::Index dim) const {
  require(stretch_a > 1.0, "SamplerConfig: stretch_a must exceed 1");
  require(n_walkers % 2 == 0, "SamplerConfig: n_walkers must be even");
  require(n_walkers >= 2 * dim, "SamplerConfig: n_walkers must be at least twice the dimension");
  require(n_steps > burn_in && burn_in >= 0, "SamplerConfig: need n_steps > burn_in >= 0");
  require(thin >= 1, "SamplerConfig: thin must be >= 1");
  if (init_points) require(init_points->cols() == n_walkers, "SamplerConfig: init_points must have n_walkers columns");
  require(init_points.has_value() || static_cast<bool>(init_sampler), "SamplerConfig: no initialization");
}

std::vector<std::vector<Eigen::Index>> Chain::walker_series() const {
  std::map<int, std::vector<Eigen::Index>> by_walker;
  for (Eigen::Index i = 0; i < size(); ++i) by_walker[walker[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<std::vector<Eigen::Index>> out;
  out.reserve(by_walker.size());
  for (auto& [w, idx] : by_walker) {
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return step[static_cast<std::size_t>(a)] < step[static_cast<std::size_t>(b)];
    });
    out.push_back(std::move(idx));
  }
  return out;
}

Chain run_ensemble(const LogDensity& logpost, const SamplerConfig& cfg) {
  const RngStream root(cfg.seed);
  const int nw = cfg.n_walkers;

  // Initial positions.
  Eigen::Index dim = 0;
  if (cfg.init_points) {
    dim = cfg.init_points->rows();
  } else {
    require(static_cast<bool>(cfg.init_sampler), "run_ensemble: no initialization");
    RngStream probe = root.substream("init-probe");
    dim = cfg.init_sampler(probe).size();
  }
  cfg.validate(dim);

  WorkerPool pool(cfg.workers);
  Eigen::MatrixXd x(dim, nw);
  Eigen::VectorXd lp(nw);
  std::vector<std::string> init_errors(static_cast<std::size_t>(nw));
  const RngStream init_root = root.substream("init");
  pool.parallel_for(static_cast<std::size_t>(nw), [&](std::size_t w) {
    const auto wi = static_cast<Eigen::Index>(w);
    if (cfg.init_points) {
      x.col(wi) = cfg.init_points->col(wi);
      lp(wi) = logpost(x.col(wi));
      if (!std::isfinite(lp(wi))) init_errors[w] = "supplied starting point has non-finite log density";
      return;
    }
    RngStream rng = init_root.substream(static_cast<std::uint64_t>(w));
    for (int attempt = 0; attempt <= cfg.max_init_retries; ++attempt) {
      x.col(wi) = cfg.init_sampler(rng);
      lp(wi) = logpost(x.col(wi));
      if (std::isfinite(lp(wi))) return;
    }
    init_errors[w] = "no finite log density after retries";
  });
  for (std::size_t w = 0; w < init_errors.size(); ++w)
    if (!init_errors[w].empty()) {
      std::ostringstream msg;
      msg << "run_ensemble: initialization failed for walker " << w << ": " << init_errors[w];
      throw Error(msg.str());
    }

  std::vector<RngStream> walker_rng;
  walker_rng.reserve(static_cast<std::size_t>(nw));
  const RngStream move_root = root.substream("moves");
  for (int w = 0; w < nw; ++w) walker_rng.push_back(move_root.substream(static_cast<std::uint64_t>(w)));

  const int retained_steps = (cfg.n_steps - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  Chain chain;
  chain.n_walkers = nw;
  chain.seeds = {cfg.seed};
  chain.burn_in_discarded = static_cast<long long>(cfg.burn_in) * nw;
  const Eigen::Index total = static_cast<Eigen::Index>(retained_steps) * nw;
  chain.samples.resize(dim, total);
  chain.logpost.resize(total);
  chain.accepted.reserve(static_cast<std::size_t>(total));
  chain.walker.reserve(static_cast<std::size_t>(total));
  chain.step.reserve(static_cast<std::size_t>(total));

  const int half = nw / 2;
  std::vector<std::uint8_t> accepted_now(static_cast<std::size_t>(nw), 0);
  long long window_prop = 0;
  long long window_acc = 0;
  bool warned_stuck = false;
  Eigen::Index out = 0;

  for (int s = 0; s < cfg.n_steps; ++s) {
    for (int h = 0; h < 2; ++h) {
      const int active0 = h * half;
      const int other0 = (1 - h) * half;
      // Active walkers only read the complementary half, which is frozen here.
      pool.parallel_for(static_cast<std::size_t>(half), [&](std::size_t j) {
        const int w = active0 + static_cast<int>(j);
        RngStream& rng = walker_rng[static_cast<std::size_t>(w)];
        const int c = other0 + static_cast<int>(rng.index(static_cast<std::size_t>(half)));
        const auto move = stretch_move(x.col(w), x.col(c), cfg.stretch_a, rng.uniform());
        const double log_u = std::log(rng.uniform());
        const double lp_new = logpost(move.proposal);
        const double log_ratio = move.log_hastings + lp_new - lp(w);
        const bool accept = std::isfinite(lp_new) && log_u < log_ratio;
        accepted_now[static_cast<std::size_t>(w)] = accept ? 1 : 0;
        if (accept) {
          x.col(w) = move.proposal;
          lp(w) = lp_new;
        }
      });
    }
    long long acc = 0;
    for (auto a : accepted_now) acc += a;
    chain.proposals += nw;
    chain.accepted_proposals += acc;
    window_prop += nw;
    window_acc += acc;
    if ((s + 1) % cfg.stuck_window == 0) {
      if (!warned_stuck && double(window_acc) < cfg.stuck_threshold * double(window_prop)) {
        std::ostringstream msg;
        msg << "acceptance below " << cfg.stuck_threshold << " over steps " << (s + 1 - cfg.stuck_window) << "-" << s;
        chain.warnings.push_back(msg.str());
        warned_stuck = true;
      }
      window_prop = window_acc = 0;
    }
    if (s >= cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0) {
      const int kept_step = (s - cfg.burn_in) / cfg.thin;
      for (int w = 0; w < nw; ++w) {
        chain.samples.col(out) = x.col(w);
        chain.logpost(out) = lp(w);
        chain.accepted.push_back(accepted_now[static_cast<std::size_t>(w)]);
        chain.walker.push_back(w);
        chain.step.push_back(kept_step);
        ++out;
      }
    }
  }
  return chain;
}

Chain combine_ensembles(std::span<const Chain> chains) {
  require(!chains.empty(), "combine_ensembles: no chains");
  const Eigen::Index dim = chains.front().dim();
  Eigen::Index total = 0;
  for (const auto& c : chains) {
    if (c.dim() != dim) throw ContractViolation("combine_ensembles: dimension mismatch");
    total += c.size();
  }
  Chain out;
  out.samples.resize(dim, total);
  out.logpost.resize(total);
  Eigen::Index at = 0;
  int walker_offset = 0;
  for (const auto& c : chains) {
    out.samples.middleCols(at, c.size()) = c.samples;
    out.logpost.segment(at, c.size()) = c.logpost;
    at += c.size();
    out.accepted.insert(out.accepted.end(), c.accepted.begin(), c.accepted.end());
    for (int w : c.walker) out.walker.push_back(w + walker_offset);
    out.step.insert(out.step.end(), c.step.begin(), c.step.end());
    walker_offset += c.n_walkers;
    out.n_walkers += c.n_walkers;
    out.seeds.insert(out.seeds.end(), c.seeds.begin(), c.seeds.end());
    out.burn_in_discarded += c.burn_in_discarded;
    out.proposals += c.proposals;
    out.accepted_proposals += c.accepted_proposals;
    out.warnings.insert(out.warnings.end(), c.warnings.begin(), c.warnings.end());
  }
  return out;
}

double integrated_autocorr_time(const std::vector<Eigen::VectorXd>& series, double window_c) {
  require(!series.empty(), "integrated_autocorr_time: no series");
  const Eigen::Index n = series.front().size();
  require(n >= 2, "integrated_autocorr_time: series too short");
  Eigen::FFT<double> fft;
  Eigen::Index padded = 1;
  while (padded < 2 * n) padded *= 2;
  std::vector<double> acf(static_cast<std::size_t>(n), 0.0);
  int used = 0;
  for (const auto& s : series) {
    require(s.size() == n, "integrated_autocorr_time: series lengths differ");
    std::vector<double> centered(static_cast<std::size_t>(padded), 0.0);
    const double mean = s.mean();
    for (Eigen::Index i = 0; i < n; ++i) centered[static_cast<std::size_t>(i)] = s(i) - mean;
    std::vector<std::complex<double>> freq;
    fft.fwd(freq, centered);
    for (auto& f : freq) f = std::norm(f);
    std::vector<double> ac;
    fft.inv(ac, freq);
    if (!(ac[0] > 0)) continue;
    for (Eigen::Index t = 0; t < n; ++t) acf[static_cast<std::size_t>(t)] += ac[static_cast<std::size_t>(t)] / ac[0];
    ++used;
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  for (auto& v : acf) v /= used;
  // Sokal's automatic window: smallest M with M >= c * tau(M).
  double tau = 1.0;
  for (Eigen::Index m = 1; m < n; ++m) {
    tau += 2.0 * acf[static_cast<std::size_t>(m)];
    if (double(m) >= window_c * tau) return tau;
  }
  return tau;
}

double split_rhat(const std::vector<Eigen::VectorXd>& series) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& s : series) {
    const Eigen::Index h = s.size() / 2;
    require(h >= 2, "split_rhat: series too short");
    halves.emplace_back(s.head(h));
    halves.emplace_back(s.segment(s.size() - h, h));
  }
  const Eigen::Index n = halves.front().size();
  const auto m = static_cast<double>(halves.size());
  Eigen::VectorXd means(halves.size());
  double within = 0;
  for (std::size_t c = 0; c < halves.size(); ++c) {
    means(static_cast<Eigen::Index>(c)) = halves[c].mean();
    within += (halves[c].array() - halves[c].mean()).square().sum() / double(n - 1);
  }
  within /= m;
  const double between_over_n = (means.array() - means.mean()).square().sum() / (m - 1);
  if (!(within > 0)) return between_over_n > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = double(n - 1) / double(n) * within + between_over_n;
  return std::sqrt(var_plus / within);
}

ChainDiagnostics diagnostics(const Chain& chain) {
  const auto walkers = chain.walker_series();
  require(!walkers.empty(), "diagnostics: empty chain");
  std::size_t steps = walkers.front().size();
  for (const auto& w : walkers) steps = std::min(steps, w.size());
  if (steps < 100) throw InsufficientSamplesError("diagnostics: need at least 100 post-burn-in steps per walker");

  ChainDiagnostics d;
  d.acceptance_rate = chain.acceptance_rate();
  d.samples = chain.size();
  d.mean = chain.samples.rowwise().mean();
  const Eigen::MatrixXd centered = chain.samples.colwise() - d.mean;
  d.sd = (centered.array().square().rowwise().sum() / double(std::max<Eigen::Index>(1, chain.size() - 1))).sqrt();
  const Eigen::Index dim = chain.dim();
  d.autocorr_time.resize(dim);
  d.split_rhat.resize(dim);
  d.mc_standard_error.resize(dim);
  for (Eigen::Index k = 0; k < dim; ++k) {
    std::vector<Eigen::VectorXd> series;
    series.reserve(walkers.size());
    for (const auto& w : walkers) {
      Eigen::VectorXd s(static_cast<Eigen::Index>(steps));
      for (std::size_t t = 0; t < steps; ++t) s(static_cast<Eigen::Index>(t)) = chain.samples(k, w[t]);
      series.push_back(std::move(s));
    }
    double tau = integrated_autocorr_time(series);
    if (!std::isfinite(tau)) tau = 1.0;  // constant coordinate
    d.autocorr_time(k) = tau;
    d.split_rhat(k) = split_rhat(series);
    d.mc_standard_error(k) = d.sd(k) * std::sqrt(std::max(tau, 1.0) / double(chain.size()));
  }
  return d;
}

ChainDiagnostics diagnostics(std::span<const Chain> chains) { return diagnostics(combine_ensembles(chains)); }

SampleEnsembled subsample(const Chain& chain, Eigen::Index q, RngStream& rng) {
  const Eigen::Index n = chain.size();
  if (q < 1 || q > n) throw ContractViolation("subsample: q must be in [1, chain size]");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Eigen::MatrixXd picked(chain.dim(), q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    picked.col(i) = chain.samples.col(idx[static_cast<std::size_t>(i)]);
  }
  return SampleEnsembled(std::move(picked));
}

}  // namespace bae
