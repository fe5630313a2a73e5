#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvbcf/stats.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace mvbcf;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mvbcf::Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("symmetric matrix validation") {
  Matrix m(2, 2);
  m << 2.0, 1.0, 1.0 + 1e-15, 3.0;
  const SymMatrix s(m);
  CHECK(s(0, 1) == s(1, 0));
  m(1, 0) = 1.5;
  CHECK(kind_of([&] { SymMatrix bad(m); }) == ErrorKind::ViolatedInvariant);
  CHECK(kind_of([] { SymMatrix bad(Matrix(2, 3)); }) == ErrorKind::Shape);
}

TEST_CASE("precision cache") {
  Matrix m = Matrix::Zero(2, 2);
  m.diagonal() << 2.0, 3.0;
  const PrecisionCache c = PrecisionCache::from(SymMatrix(m), "test");
  CHECK(c.log_det == doctest::Approx(std::log(6.0)));
  CHECK(c.inverse(1, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("cholesky jitter") {
  Matrix singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  const Matrix L = cholesky_with_jitter(singular, "singular");
  CHECK((L * L.transpose() - singular).norm() < 1e-6);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  CHECK(kind_of([&] { cholesky_with_jitter(indefinite, "indefinite"); }) == ErrorKind::DecompositionFailure);
}

TEST_CASE("multivariate normal draws") {
  Rng rng(1);
  Vector mean(2);
  mean << 1.0, -2.0;
  CHECK(sample_mvn(mean, SymMatrix(Matrix::Zero(2, 2)), rng) == mean);

  Matrix cov(2, 2);
  cov << 2.0, 0.6, 0.6, 1.0;
  const int m = 40000;
  Vector sum = Vector::Zero(2);
  Matrix outer = Matrix::Zero(2, 2);
  for (int i = 0; i < m; ++i) {
    const Vector x = sample_mvn(mean, SymMatrix(cov), rng);
    sum += x;
    outer += (x - mean) * (x - mean).transpose();
  }
  CHECK((sum / m - mean).norm() < 0.03);
  CHECK((outer / m - cov).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("inverse Wishart") {
  Rng rng(2);
  const SymMatrix scale = SymMatrix::identity(2);
  CHECK(kind_of([&] { sample_inv_wishart(1.0, scale, rng); }) == ErrorKind::InvalidDegreesOfFreedom);

  // E[IW(df, S)] = S / (df - p - 1) = I / 7 for df = 10, p = 2.
  const int m = 40000;
  Matrix sum = Matrix::Zero(2, 2);
  for (int i = 0; i < m; ++i) sum += sample_inv_wishart(10.0, scale, rng).matrix();
  sum /= m;
  CHECK(sum(0, 0) == doctest::Approx(1.0 / 7.0).epsilon(0.03));
  CHECK(sum(1, 1) == doctest::Approx(1.0 / 7.0).epsilon(0.03));
  CHECK(std::abs(sum(0, 1)) < 0.005);

  // p = 1 reduces to an inverse gamma: E = scale / (df - 2).
  double s = 0.0;
  for (int i = 0; i < m; ++i) s += sample_inv_wishart(6.0, SymMatrix::identity(1, 2.0), rng)(0, 0);
  CHECK(s / m == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("gamma draws") {
  Rng rng(3);
  CHECK(kind_of([&] { sample_gamma(0.0, 1.0, rng); }) == ErrorKind::InvalidParameter);
  double s = 0.0;
  for (int i = 0; i < 40000; ++i) s += sample_gamma(3.0, 2.0, rng);
  CHECK(s / 40000 == doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("truncated normal") {
  Rng rng(4);
  for (double mu : {-3.0, 0.0, 1.5}) {
    double s = 0.0;
    const int m = 40000;
    for (int i = 0; i < m; ++i) {
      const double x = sample_truncated_normal(mu, true, rng);
      REQUIRE(x > 0.0);
      s += x;
    }
    const double phi = std::exp(-0.5 * mu * mu) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * std::erfc(-mu / std::sqrt(2.0));
    CHECK(s / m == doctest::Approx(mu + phi / cdf).epsilon(0.02));
  }
  for (int i = 0; i < 1000; ++i) CHECK(sample_truncated_normal(2.0, false, rng) < 0.0);
}

TEST_CASE("quantiles") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-6));
  CHECK(chi_squared_quantile(0.1, 3.0) == doctest::Approx(0.5843744).epsilon(1e-6));
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(quantile_sorted(v, 0.5) == doctest::Approx(2.5));
  CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75));
  CHECK(quantile_sorted(v, 1.0) == 4.0);
  CHECK(kind_of([] { quantile_sorted(std::vector<double>{}, 0.5); }) == ErrorKind::EmptyInput);
}

TEST_CASE("empirical CRPS") {
  const std::vector<double> two{0.0, 2.0};
  CHECK(crps_empirical(two, 1.0) == doctest::Approx(0.5));
  CHECK(crps_empirical(two, 3.0) == doctest::Approx(1.5));
  CHECK(crps_empirical(std::vector<double>{4.0}, 1.0) == doctest::Approx(3.0));
  CHECK(kind_of([] { crps_empirical(std::vector<double>{}, 0.0); }) == ErrorKind::EmptyInput);

  Rng rng(5);
  std::vector<double> draws(200);
  for (double& d : draws) d = rng.normal();
  double a = 0.0, b = 0.0;
  for (double x : draws) {
    a += std::abs(x - 0.3);
    for (double y : draws) b += std::abs(x - y);
  }
  const double m = static_cast<double>(draws.size());
  CHECK(crps_empirical(draws, 0.3) == doctest::Approx(a / m - 0.5 * b / (m * m)).epsilon(1e-12));
}
