#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bae/probability.hpp"

using namespace bae;

namespace {

Eigen::MatrixXd random_spd(Eigen::Index d, RngStream& rng) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("gaussian_logpdf at the mean of a standard normal") {
  for (int d : {1, 3, 7}) {
    const auto g = GaussianModeld::standard(d);
    CHECK(gaussian_logpdf(Eigen::VectorXd::Zero(d), g) ==
          doctest::Approx(-0.5 * d * std::log(2 * std::numbers::pi)).epsilon(1e-14));
  }
}

TEST_CASE("gaussian_logpdf of x = 1 under N(0, 1)") {
  const auto g = GaussianModeld::standard(1);
  CHECK(gaussian_logpdf(Eigen::VectorXd::Ones(1), g) == doctest::Approx(-1.4189385332046727).epsilon(1e-14));
}

TEST_CASE("gaussian_logpdf against an explicit 2x2 inverse") {
  Eigen::Matrix2d s;
  s << 2, 1, 1, 2;
  const GaussianModeld g(Eigen::Vector2d::Zero(), s);
  const Eigen::Vector2d x(1, 1);
  // det = 3, inverse = [[2,-1],[-1,2]] / 3, so x' S^-1 x = 2/3.
  const double expected = -0.5 * (2.0 / 3.0 + std::log(3.0) + 2 * std::log(2 * std::numbers::pi));
  CHECK(gaussian_logpdf(Eigen::VectorXd(x), g) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("gaussian_logpdf rejects a point of the wrong length") {
  const auto g = GaussianModeld::standard(2);
  CHECK_THROWS_AS(gaussian_logpdf(Eigen::VectorXd::Zero(3), g), ContractViolation);
}

TEST_CASE("gaussian_logpdf is invariant under a joint permutation") {
  RngStream rng(11);
  const Eigen::Index d = 5;
  const Eigen::MatrixXd s = random_spd(d, rng);
  Eigen::VectorXd mean(d), x(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    mean(i) = rng.normal();
    x(i) = rng.normal();
  }
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(d);
  perm.indices() << 3, 0, 4, 1, 2;
  const GaussianModeld a(mean, s);
  const GaussianModeld b(perm * mean, perm * s * perm.transpose());
  CHECK(gaussian_logpdf(perm * x, b) == doctest::Approx(gaussian_logpdf(x, a)).epsilon(1e-12));
}

TEST_CASE("gaussian_logpdf of a block-diagonal covariance is the sum over blocks") {
  RngStream rng(12);
  const Eigen::MatrixXd s1 = random_spd(3, rng);
  const Eigen::MatrixXd s2 = random_spd(2, rng);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(5, 5);
  s.topLeftCorner(3, 3) = s1;
  s.bottomRightCorner(2, 2) = s2;
  Eigen::VectorXd x(5);
  x << 0.3, -1.2, 0.7, 2.0, -0.4;
  const double whole = gaussian_logpdf(x, GaussianModeld(Eigen::VectorXd::Zero(5), s));
  const double parts = gaussian_logpdf(Eigen::VectorXd(x.head(3)), GaussianModeld(Eigen::VectorXd::Zero(3), s1)) +
                       gaussian_logpdf(Eigen::VectorXd(x.tail(2)), GaussianModeld(Eigen::VectorXd::Zero(2), s2));
  CHECK(std::abs(whole - parts) < 1e-10);
}

TEST_CASE("estimate_moments of two points") {
  Eigen::MatrixXd x(2, 2);
  x << 1, 3, 2, 4;
  const auto m = estimate_moments(SampleEnsembled(x));
  CHECK(m.mean.isApprox(Eigen::Vector2d(2, 3)));
  CHECK(m.covariance.isApprox(Eigen::Matrix2d::Constant(2.0)));
}

TEST_CASE("estimate_moments of identical members is exactly zero covariance") {
  Eigen::MatrixXd x(3, 6);
  x.colwise() = Eigen::Vector3d(0.1, -7.3, 1e6);
  const auto m = estimate_moments(SampleEnsembled(x));
  CHECK(m.covariance.isZero(0.0));
  CHECK(m.mean.isApprox(Eigen::Vector3d(0.1, -7.3, 1e6)));
}

TEST_CASE("estimate_moments needs two members") {
  CHECK_THROWS_AS(estimate_moments(SampleEnsembled(Eigen::MatrixXd::Zero(2, 1))), InsufficientSamplesError);
}

TEST_CASE("estimate_moments of 1000 standard normal pairs") {
  RngStream rng(2024);
  const auto e = sample_gaussian(GaussianModeld::standard(2), 1000, rng);
  const auto m = estimate_moments(e);
  CHECK((m.mean.array().abs() < 0.1).all());
  CHECK(((m.covariance - Eigen::Matrix2d::Identity()).array().abs() < 0.15).all());
}

TEST_CASE("estimate_moments recovers mean and covariance within 5 sigma at n = 1e4") {
  RngStream rng(5);
  const Eigen::Index d = 4, n = 10000;
  const Eigen::MatrixXd s = random_spd(d, rng);
  const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(d, -1, 2);
  const auto m = estimate_moments(sample_gaussian(GaussianModeld(mu, s), n, rng));
  for (Eigen::Index i = 0; i < d; ++i) {
    CHECK(std::abs(m.mean(i) - mu(i)) < 5 * std::sqrt(s(i, i) / n));
    for (Eigen::Index j = 0; j < d; ++j) {
      const double se = std::sqrt((s(i, i) * s(j, j) + s(i, j) * s(i, j)) / n);
      CHECK(std::abs(m.covariance(i, j) - s(i, j)) < 5 * se);
    }
  }
}

TEST_CASE("estimate_moments covariance is symmetric positive semidefinite") {
  RngStream rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x(6, 4);  // fewer members than dimensions: rank deficient
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * 1e3;
    const auto m = estimate_moments(SampleEnsembled(x));
    CHECK((m.covariance - m.covariance.transpose()).norm() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.covariance);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * eig.eigenvalues().maxCoeff());
  }
}

TEST_CASE("factorize the identity") {
  const auto f = factorize(Eigen::MatrixXd::Identity(3, 3));
  CHECK(f.factor.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  CHECK(f.jitter == 0.0);
}

TEST_CASE("factorize a zero matrix uses the first ladder jitter") {
  const auto f = factorize(Eigen::MatrixXd::Zero(2, 2));
  CHECK(f.jitter == 1e-12);  // zero trace: scale 1
  CHECK(f.factor.isApprox(std::sqrt(1e-12) * Eigen::MatrixXd::Identity(2, 2)));
}

TEST_CASE("factorize climbs the ladder for a rank-deficient matrix") {
  Eigen::Matrix3d s;
  s << 4, 2, 0, 2, 1, 0, 0, 0, 1;  // rank 2
  const auto f = factorize(s);
  const double scale = s.trace() / 3;
  CHECK(f.jitter > 0);
  CHECK(f.jitter <= 1e-4 * scale);
  const double ratio = f.jitter / (1e-12 * scale);
  CHECK(std::abs(std::log10(ratio) - std::round(std::log10(ratio))) < 1e-9);  // a rung of the ladder
  // The previous rung must fail.
  if (f.jitter > 1e-12 * scale * 1.5) {
    Eigen::MatrixXd out;
    CHECK_FALSE(detail::try_cholesky<double>(s, f.jitter / 10, out));
  }
  const Eigen::MatrixXd rebuilt = f.factor * f.factor.transpose();
  CHECK((rebuilt - (s + f.jitter * Eigen::Matrix3d::Identity())).norm() / s.norm() < 1e-8);
}

TEST_CASE("factorize a seeded random SPD 5x5 reconstructs to 1e-10") {
  RngStream rng(99);
  const Eigen::MatrixXd s = random_spd(5, rng);
  const auto f = factorize(s);
  CHECK(f.jitter == 0.0);
  CHECK((f.factor * f.factor.transpose() - s).norm() < 1e-10);
}

TEST_CASE("factorize rejects an indefinite matrix") {
  Eigen::Matrix2d s;
  s << 1, 0, 0, -1;
  CHECK_THROWS_AS(factorize(s), DegenerateCovarianceError);
  CHECK_THROWS_AS(factorize(s, JitterPolicy::disabled()), DegenerateCovarianceError);
}

TEST_CASE("GaussianModel symmetrizes its covariance") {
  Eigen::Matrix2d s;
  s << 2, 1 + 1e-9, 1, 2;
  const GaussianModeld g(Eigen::Vector2d::Zero(), s);
  CHECK((g.covariance() - g.covariance().transpose()).norm() == 0.0);
  CHECK_THROWS_AS(GaussianModeld(Eigen::Vector3d::Zero(), s), ContractViolation);
}

TEST_CASE("sample_gaussian with zero covariance and jitter disabled returns the mean") {
  const Eigen::Vector3d mu(1, -2, 3);
  const GaussianModeld g(mu, Eigen::Matrix3d::Zero(), JitterPolicy::disabled());
  CHECK(g.semidefinite());
  RngStream rng(1);
  const auto e = sample_gaussian(g, 50, rng);
  for (Eigen::Index j = 0; j < e.count(); ++j) CHECK(e.member(j) == mu);
  CHECK_THROWS_AS(g.whiten(mu), DegenerateCovarianceError);
}

TEST_CASE("sample_gaussian N(0, 1) at n = 1e5") {
  RngStream rng(31);
  const auto e = sample_gaussian(GaussianModeld::standard(1), 100000, rng);
  const auto m = estimate_moments(e);
  CHECK(std::abs(m.mean(0)) < 0.02);
  CHECK(std::abs(m.covariance(0, 0) - 1) < 0.02);
}

TEST_CASE("sample_gaussian is deterministic per seed") {
  const GaussianModeld g(Eigen::Vector2d(1, 2), Eigen::Matrix2d::Identity());
  RngStream a(77), b(77), c(78);
  const auto x = sample_gaussian(g, 100, a).samples();
  CHECK(x == sample_gaussian(g, 100, b).samples());
  CHECK(x != sample_gaussian(g, 100, c).samples());
}

TEST_CASE("rng substreams are distinct and reproducible") {
  const RngStream root(2024);
  CHECK(root.substream("naive").seed() == RngStream(2024).substream("naive").seed());
  CHECK(root.substream("naive").seed() != root.substream("bae").seed());
  CHECK(root.substream(0).seed() != root.substream(1).seed());
}
