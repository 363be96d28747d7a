#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "bae/sampler.hpp"

using namespace bae;

namespace {

Chain iid_chain(int walkers, int steps, double centre, RngStream& rng, Eigen::Index d = 1) {
  Chain c;
  c.n_walkers = walkers;
  c.samples.resize(d, walkers * steps);
  c.logpost = Eigen::VectorXd::Zero(walkers * steps);
  Eigen::Index col = 0;
  for (int s = 0; s < steps; ++s)
    for (int w = 0; w < walkers; ++w, ++col) {
      for (Eigen::Index i = 0; i < d; ++i) c.samples(i, col) = centre + rng.normal();
      c.walker.push_back(w);
      c.step.push_back(s);
      c.accepted.push_back(1);
    }
  return c;
}

double standard_normal_logpdf(const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); }

}  // namespace

TEST_CASE("stretch_z endpoints") {
  CHECK(stretch_z(2.0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(stretch_z(2.0, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(stretch_z(3.5, 0.0) == doctest::Approx(1 / 3.5).epsilon(1e-15));
}

TEST_CASE("stretch_z follows the 1/sqrt(z) density on [1/a, a]") {
  // CDF of g(z) ~ z^-1/2 on [1/a, a] is (sqrt(z) - sqrt(1/a)) / (sqrt(a) - sqrt(1/a)).
  const double a = 2.0;
  RngStream rng(17);
  const int n = 200000;
  const std::vector<double> probes = {0.6, 0.8, 1.0, 1.3, 1.7};
  std::vector<int> below(probes.size(), 0);
  for (int i = 0; i < n; ++i) {
    const double z = stretch_z(a, rng.uniform());
    REQUIRE(z >= 1 / a);
    REQUIRE(z <= a);
    for (std::size_t p = 0; p < probes.size(); ++p) below[p] += z <= probes[p];
  }
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const double cdf = (std::sqrt(probes[p]) - std::sqrt(1 / a)) / (std::sqrt(a) - std::sqrt(1 / a));
    const double se = std::sqrt(cdf * (1 - cdf) / n);
    CHECK(std::abs(double(below[p]) / n - cdf) < 5 * se);
  }
}

TEST_CASE("stretch_move with z = 1 returns the walker and zero Hastings term") {
  const Eigen::Vector3d x(1, -2, 0.5), c(4, 4, 4);
  // z = 1 when s = sqrt(a), i.e. u = (sqrt(a) - 1) / (a - 1).
  const double a = 2.0;
  const auto p = stretch_move(x, c, a, (std::sqrt(a) - 1) / (a - 1));
  CHECK(p.z == doctest::Approx(1.0).epsilon(1e-15));
  CHECK((p.proposal - x).norm() < 1e-14);
  CHECK(std::abs(p.log_hastings) < 1e-14);
}

TEST_CASE("stretch_move in one dimension has zero Hastings term") {
  RngStream rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto p = stretch_move(Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0), 2.0, rng);
    CHECK(p.log_hastings == 0.0);
  }
}

TEST_CASE("stretch_move symmetry: (Y, X_c, 1/z) maps back to X") {
  RngStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd x(12), c(12);
    for (int i = 0; i < 12; ++i) {
      x(i) = 3 * rng.normal();
      c(i) = 3 * rng.normal();
    }
    const auto forward = stretch_move(x, c, 2.0, rng);
    const Eigen::VectorXd back = c + (1 / forward.z) * (forward.proposal - c);
    CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-12 * (1 + x.cwiseAbs().maxCoeff()));
    CHECK(forward.log_hastings == doctest::Approx(11 * std::log(forward.z)));
  }
}

TEST_CASE("stretch_move validates its arguments") {
  CHECK_THROWS_AS(stretch_move(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), 1.0, 0.5), ContractViolation);
  CHECK_THROWS_AS(stretch_move(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(3), 2.0, 0.5), ContractViolation);
}

TEST_CASE("run_ensemble on a flat target") {
  SamplerConfig cfg;
  cfg.n_walkers = 8;
  cfg.n_steps = 200;
  cfg.burn_in = 0;
  cfg.seed = 4;
  const auto flat = [](const Eigen::VectorXd&) { return 0.0; };
  SUBCASE("in one dimension every proposal is accepted") {
    cfg.init_sampler = [](RngStream& r) { return Eigen::VectorXd::Constant(1, r.normal()); };
    const Chain c = run_ensemble(flat, cfg);
    CHECK(c.acceptance_rate() == 1.0);
    CHECK(c.size() == 8 * 200);
  }
  SUBCASE("in d dimensions acceptance is E[min(1, z^(d-1))]") {
    // With a = 2 and d = 3: P(z >= 1) plus the integral of z^2 g(z) over [1/2, 1].
    cfg.n_walkers = 16;
    cfg.n_steps = 4000;
    cfg.init_sampler = [](RngStream& r) { return Eigen::Vector3d(r.normal(), r.normal(), r.normal()).eval(); };
    const Chain c = run_ensemble(flat, cfg);
    const double a = 2.0, norm = 2 * (std::sqrt(a) - 1 / std::sqrt(a));
    const double p_up = 2 * (std::sqrt(a) - 1) / norm;
    const double low = (2.0 / 5.0) * (1 - std::pow(1 / a, 2.5)) / norm;
    CHECK(c.acceptance_rate() == doctest::Approx(p_up + low).epsilon(0.01));
  }
}

TEST_CASE("run_ensemble is bit-for-bit deterministic, independent of workers") {
  SamplerConfig cfg;
  cfg.n_walkers = 10;
  cfg.n_steps = 300;
  cfg.burn_in = 50;
  cfg.seed = 99;
  cfg.init_sampler = [](RngStream& r) { return Eigen::Vector3d(r.normal(), r.normal(), r.normal()).eval(); };
  const Chain a = run_ensemble(standard_normal_logpdf, cfg);
  const Chain b = run_ensemble(standard_normal_logpdf, cfg);
  cfg.workers = 4;
  const Chain c = run_ensemble(standard_normal_logpdf, cfg);
  CHECK(a.samples == b.samples);
  CHECK(a.logpost == b.logpost);
  CHECK(a.samples == c.samples);
  CHECK(a.accepted == c.accepted);
  cfg.seed = 100;
  CHECK(run_ensemble(standard_normal_logpdf, cfg).samples != a.samples);
}

TEST_CASE("run_ensemble bookkeeping: burn-in and thinning") {
  SamplerConfig cfg;
  cfg.n_walkers = 6;
  cfg.n_steps = 100;
  cfg.burn_in = 40;
  cfg.thin = 3;
  cfg.init_sampler = [](RngStream& r) { return Eigen::Vector2d(r.normal(), r.normal()).eval(); };
  const Chain c = run_ensemble(standard_normal_logpdf, cfg);
  CHECK(c.size() == 6 * 20);
  CHECK(c.burn_in_discarded == 6 * 40);
  CHECK(c.proposals == 6 * 100);
  const auto series = c.walker_series();
  REQUIRE(series.size() == 6);
  for (const auto& s : series) CHECK(s.size() == 20);
}

TEST_CASE("run_ensemble samples N(0, I_3)") {
  SamplerConfig cfg;
  cfg.n_walkers = 50;
  cfg.n_steps = 2000;
  cfg.burn_in = 200;
  cfg.seed = 2024;
  cfg.init_sampler = [](RngStream& r) { return Eigen::Vector3d(r.normal(), r.normal(), r.normal()).eval(); };
  const Chain c = run_ensemble(standard_normal_logpdf, cfg);
  const auto diag = diagnostics(c);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(diag.mean(i)) < 3 * diag.mc_standard_error(i));
    CHECK(std::abs(diag.sd(i) * diag.sd(i) - 1) < 0.1);
    CHECK(diag.split_rhat(i) < 1.05);
  }
  CHECK(diag.acceptance_rate > 0.3);
}

TEST_CASE("run_ensemble rejects outside the support and redraws bad starts") {
  SamplerConfig cfg;
  cfg.n_walkers = 8;
  cfg.n_steps = 300;
  cfg.burn_in = 0;
  cfg.init_sampler = [](RngStream& r) { return Eigen::VectorXd::Constant(1, 2 * r.uniform() - 0.5); };
  const auto box = [](const Eigen::VectorXd& x) {
    return (x(0) >= 0 && x(0) <= 1) ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  const Chain c = run_ensemble(box, cfg);
  CHECK(c.samples.minCoeff() >= 0);
  CHECK(c.samples.maxCoeff() <= 1);
}

TEST_CASE("run_ensemble fails when no finite start can be found") {
  SamplerConfig cfg;
  cfg.n_walkers = 4;
  cfg.n_steps = 10;
  cfg.burn_in = 0;
  cfg.max_init_retries = 5;
  cfg.init_sampler = [](RngStream& r) { return Eigen::VectorXd::Constant(1, r.normal()); };
  CHECK_THROWS_AS(run_ensemble([](const Eigen::VectorXd&) { return -std::numeric_limits<double>::infinity(); }, cfg),
                  Error);
}

TEST_CASE("SamplerConfig validation") {
  SamplerConfig cfg;
  cfg.init_sampler = [](RngStream&) { return Eigen::Vector2d::Zero().eval(); };
  cfg.n_walkers = 3;  // must exceed the dimension and be even-splittable
  CHECK_THROWS_AS(cfg.validate(2), ContractViolation);
  cfg.n_walkers = 8;
  cfg.burn_in = cfg.n_steps;
  CHECK_THROWS_AS(cfg.validate(2), ContractViolation);
}

TEST_CASE("combine_ensembles") {
  RngStream rng(1);
  const Chain a = iid_chain(4, 10, 0, rng);
  SUBCASE("one chain is the identity") {
    const std::vector<Chain> one = {a};
    const Chain c = combine_ensembles(one);
    CHECK(c.samples == a.samples);
    CHECK(c.walker == a.walker);
  }
  SUBCASE("six chains of 15000 samples give 90000") {
    std::vector<Chain> six;
    for (int e = 0; e < 6; ++e) six.push_back(iid_chain(30, 500, 0, rng));
    const Chain c = combine_ensembles(six);
    CHECK(c.size() == 90000);
    CHECK(c.n_walkers == 180);
    std::set<int> ids(c.walker.begin(), c.walker.end());
    CHECK(ids.size() == 180);
  }
}

TEST_CASE("integrated autocorrelation time of iid series is about 1") {
  RngStream rng(8);
  std::vector<Eigen::VectorXd> series;
  for (int w = 0; w < 20; ++w) {
    Eigen::VectorXd s(2000);
    for (auto& v : s) v = rng.normal();
    series.push_back(s);
  }
  CHECK(std::abs(integrated_autocorr_time(series) - 1.0) < 0.2);
}

TEST_CASE("autocorrelation time of an AR(1) series matches (1 + rho) / (1 - rho)") {
  RngStream rng(9);
  const double rho = 0.8;
  std::vector<Eigen::VectorXd> series;
  for (int w = 0; w < 20; ++w) {
    Eigen::VectorXd s(5000);
    double x = rng.normal() / std::sqrt(1 - rho * rho);
    for (auto& v : s) v = x = rho * x + rng.normal();
    series.push_back(s);
  }
  CHECK(integrated_autocorr_time(series) == doctest::Approx(9.0).epsilon(0.15));
}

TEST_CASE("split_rhat") {
  RngStream rng(10);
  SUBCASE("duplicated halves give about 1") {
    Eigen::VectorXd half(500);
    for (auto& v : half) v = rng.normal();
    Eigen::VectorXd whole(1000);
    whole << half, half;
    CHECK(std::abs(split_rhat({whole, whole}) - 1.0) < 0.01);
  }
  SUBCASE("chains centred at -5 and +5 are flagged") {
    Eigen::VectorXd a(1000), b(1000);
    for (auto& v : a) v = -5 + rng.normal();
    for (auto& v : b) v = 5 + rng.normal();
    CHECK(split_rhat({a, b}) > 1.2);
  }
}

TEST_CASE("diagnostics of a constructed iid chain") {
  RngStream rng(12);
  const Chain c = iid_chain(10, 1000, 0, rng, 2);
  const auto d = diagnostics(c);
  CHECK(d.samples == 10000);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(d.autocorr_time(i) - 1) < 0.2);
    CHECK(std::abs(d.split_rhat(i) - 1) < 0.02);
    CHECK(d.mc_standard_error(i) == doctest::Approx(d.sd(i) * std::sqrt(std::max(1.0, d.autocorr_time(i)) / 10000.0)));
  }
}

TEST_CASE("diagnostics needs 100 steps per walker") {
  RngStream rng(13);
  CHECK_THROWS_AS(diagnostics(iid_chain(10, 50, 0, rng)), InsufficientSamplesError);
}

TEST_CASE("subsample") {
  RngStream rng(14);
  const Chain c = iid_chain(5, 20, 0, rng);
  SUBCASE("q equal to the total is a permutation") {
    RngStream r(1);
    const auto e = subsample(c, c.size(), r);
    std::vector<double> a(c.samples.data(), c.samples.data() + c.size());
    std::vector<double> b(e.samples().data(), e.samples().data() + e.count());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  SUBCASE("q = 1 from identical samples returns that sample") {
    Chain same = c;
    same.samples.setConstant(3.25);
    RngStream r(2);
    CHECK(subsample(same, 1, r).member(0)(0) == 3.25);
  }
  SUBCASE("q larger than the chain is an error") {
    RngStream r(3);
    CHECK_THROWS_AS(subsample(c, c.size() + 1, r), ContractViolation);
  }
  SUBCASE("draws are distinct") {
    RngStream r(4);
    const auto e = subsample(c, 50, r);
    std::set<double> seen(e.samples().data(), e.samples().data() + e.count());
    CHECK(seen.size() == 50);
  }
}
