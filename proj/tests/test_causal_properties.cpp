#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvbcf/bart.hpp"
#include "mvbcf/causal.hpp"
#include "mvbcf/reference/scalar_bcf.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace mvbcf;

namespace {

Matrix noise_rows(int n, int p, Rng& rng) {
  return Matrix::NullaryExpr(n, p, [&] { return rng.normal(); });
}

double noise_loglik(const Matrix& R, const Matrix& sigma) {
  const Eigen::LLT<Matrix> chol(sigma);
  double s = 0.0;
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    s += oracle::log_mvn_density(R.row(i).transpose(), Vector::Zero(R.cols()), chol);
  }
  return s;
}

std::vector<int> one_leaf(Eigen::Index n) { return std::vector<int>(static_cast<std::size_t>(n), 0); }

}  // namespace

TEST_CASE("merged leaf beats an arbitrary split on exchangeable noise") {
  Rng rng(3);
  const LeafPrior prior = LeafPrior::isotropic(2, 1.0);
  const SymMatrix sigma = SymMatrix::identity(2);
  double total = 0.0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    const Matrix R = noise_rows(20, 2, rng);
    std::vector<int> split(20);
    for (int i = 0; i < 20; ++i) split[static_cast<std::size_t>(i)] = i < 8 ? 0 : 1;
    const double merged = mu_log_marginal(leaf_suffstats(one_leaf(20), 1, R), sigma, prior);
    const double two = mu_log_marginal(leaf_suffstats(split, 2, R), sigma, prior);
    total += merged - two;
  }
  CHECK(total / reps > 0.0);
}

TEST_CASE("point-mass prior limits") {
  Rng rng(5);
  const Matrix R = noise_rows(6, 2, rng);
  const Matrix sigma = (Matrix(2, 2) << 1.0, 0.3, 0.3, 0.8).finished();
  const LeafPrior tight{Vector::Zero(2), SymMatrix::identity(2, 1e-12)};
  const auto stats = leaf_suffstats(one_leaf(6), 1, R);
  CHECK(mu_log_marginal(stats, SymMatrix(sigma), tight) == doctest::Approx(noise_loglik(R, sigma)).epsilon(1e-9));
  const LeafPosterior post = mu_leaf_posterior(stats[0], NoiseState(SymMatrix(sigma)), LeafPriorState(tight));
  CHECK(post.mean.cwiseAbs().maxCoeff() < 1e-9);

  // Many rows with a fixed mean: the posterior mean approaches it.
  Matrix many = Matrix::NullaryExpr(20000, 2, [&] { return rng.normal(); });
  many.col(0).array() += 1.5;
  many.col(1).array() -= 0.5;
  const auto big = leaf_suffstats(one_leaf(20000), 1, many);
  const LeafPosterior data_wins =
      mu_leaf_posterior(big[0], NoiseState(SymMatrix::identity(2)), LeafPriorState(LeafPrior::isotropic(2, 1.0)));
  const Vector rbar = many.colwise().mean().transpose();
  CHECK((data_wins.mean - rbar).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("untreated tau leaf") {
  Rng rng(7);
  const Matrix R = noise_rows(9, 2, rng);
  const Matrix Z = Matrix::Zero(9, 2);
  const Matrix sigma = (Matrix(2, 2) << 0.9, -0.2, -0.2, 1.1).finished();
  const LeafPrior prior{(Vector(2) << 0.3, -0.4).finished(), SymMatrix((Matrix(2, 2) << 0.2, 0.05, 0.05, 0.1).finished())};
  const auto stats = leaf_suffstats(one_leaf(9), 1, R, &Z);
  CHECK(tau_log_marginal(stats, SymMatrix(sigma), prior) == doctest::Approx(noise_loglik(R, sigma)).epsilon(1e-12));

  const NoiseState noise{SymMatrix(sigma)};
  const LeafPriorState state(prior);
  const int m = 20000;
  Vector sum = Vector::Zero(2);
  Matrix outer = Matrix::Zero(2, 2);
  for (int d = 0; d < m; ++d) {
    const Vector x = sample_tau_leaf(stats[0], noise, state, rng);
    sum += x;
    outer += (x - prior.mean) * (x - prior.mean).transpose();
  }
  const Matrix cov = outer / m;
  for (int a = 0; a < 2; ++a) {
    CHECK(std::abs(sum(a) / m - prior.mean(a)) < 0.05 * std::sqrt(prior.cov(a, a)));
    CHECK(cov(a, a) == doctest::Approx(prior.cov(a, a)).epsilon(0.05));
  }
}

TEST_CASE("tau leaf reductions") {
  Rng rng(9);
  SUBCASE("p = 1 matches the scalar marginal with effective size sum Z") {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix R = noise_rows(15, 1, rng);
      Matrix Z(15, 1);
      for (int i = 0; i < 15; ++i) Z(i, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const double s2 = 0.5 + rng.uniform();
      const double v = 0.1 + rng.uniform();
      const auto stats = leaf_suffstats(one_leaf(15), 1, R, &Z);
      const double matrix_form =
          tau_log_marginal(stats, SymMatrix::identity(1, s2), LeafPrior::isotropic(1, v));
      const double scalar = reference::scalar_leaf_log_marginal(15, Z.squaredNorm(), Z.col(0).dot(R.col(0)),
                                                                R.squaredNorm(), s2, v);
      CHECK(matrix_form == doctest::Approx(scalar).epsilon(1e-12));
    }
  }
  SUBCASE("block decomposition with one all-treated and one untreated component") {
    const Matrix R = noise_rows(11, 2, rng);
    Matrix Z(11, 2);
    Z.col(0).setOnes();
    Z.col(1).setZero();
    const auto stats = leaf_suffstats(one_leaf(11), 1, R, &Z);
    const double joint = tau_log_marginal(stats, SymMatrix::identity(2), LeafPrior::isotropic(2, 0.4));
    const Matrix r0 = R.col(0);
    const double first = mu_log_marginal(leaf_suffstats(one_leaf(11), 1, r0), SymMatrix::identity(1),
                                         LeafPrior::isotropic(1, 0.4));
    const double second = noise_loglik(R.col(1), Matrix::Identity(1, 1));
    CHECK(joint == doctest::Approx(first + second).epsilon(1e-12));
  }
  SUBCASE("p = 1 all treated: tau posterior equals the mu posterior") {
    const Matrix R = noise_rows(7, 1, rng);
    const Matrix Z = Matrix::Ones(7, 1);
    const LeafPriorState prior(LeafPrior::isotropic(1, 0.05));
    const NoiseState noise(SymMatrix::identity(1));
    const LeafPosterior t = tau_leaf_posterior(leaf_suffstats(one_leaf(7), 1, R, &Z)[0], noise, prior);
    const LeafPosterior m = mu_leaf_posterior(leaf_suffstats(one_leaf(7), 1, R)[0], noise, prior);
    CHECK(t.mean(0) == doctest::Approx(m.mean(0)).epsilon(1e-14));
    CHECK(t.cov(0, 0) == doctest::Approx(m.cov(0, 0)).epsilon(1e-14));
  }
  SUBCASE("diagonal noise, untreated component keeps the prior mean") {
    const Matrix R = noise_rows(10, 2, rng);
    Matrix Z(10, 2);
    for (int i = 0; i < 10; ++i) Z(i, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Z.col(1).setZero();
    const Matrix sigma = (Matrix(2, 2) << 0.7, 0.0, 0.0, 1.3).finished();
    const LeafPrior prior{(Vector(2) << 0.2, -0.35).finished(), SymMatrix::identity(2, 0.3)};
    const LeafPosterior post = tau_leaf_posterior(leaf_suffstats(one_leaf(10), 1, R, &Z)[0],
                                                  NoiseState(SymMatrix(sigma)), LeafPriorState(prior));
    CHECK(post.mean(1) == doctest::Approx(-0.35).epsilon(1e-15));
    CHECK(post.cov(1, 1) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(post.cov(0, 1) == 0.0);
  }
}

TEST_CASE("covariance update limits") {
  Rng rng(11);
  SUBCASE("zero residuals, large prior df") {
    const Matrix Y = Matrix::Zero(30, 2);
    const SymMatrix scale((Matrix(2, 2) << 200.0, 40.0, 40.0, 100.0).finished());
    const WishartPrior prior{200.0, scale};
    const Matrix expected = scale.matrix() / (200.0 + 30.0 - 2.0 - 1.0);
    Matrix sum = Matrix::Zero(2, 2);
    const int m = 10000;
    for (int d = 0; d < m; ++d) {
      const SymMatrix s = update_sigma_matrix(Y, Y, prior, rng);
      CHECK_NOTHROW(PrecisionCache::from(s, "draw"));
      sum += s.matrix();
    }
    CHECK(((sum / m) - expected).cwiseAbs().maxCoeff() < 0.01 * expected.maxCoeff());
  }
  SUBCASE("p = 1 agrees with the scalar Gamma update") {
    const Vector resid = Vector::NullaryExpr(25, [&] { return 1.3 * rng.normal(); });
    const double nu = 3.0;
    const double lambda = 0.4;
    const WishartPrior prior{nu, SymMatrix::identity(1, nu * lambda)};
    const Matrix Y = resid;
    const Matrix zero = Matrix::Zero(25, 1);
    const int m = 10000;
    double a1 = 0.0, a2 = 0.0, b1 = 0.0, b2 = 0.0;
    for (int d = 0; d < m; ++d) {
      const double x = update_sigma_matrix(Y, zero, prior, rng)(0, 0);
      const double y = update_sigma_univariate(resid, NoisePrior{nu, lambda}, rng);
      a1 += x;
      a2 += x * x;
      b1 += y;
      b2 += y * y;
    }
    CHECK(a1 / m == doctest::Approx(b1 / m).epsilon(0.05));
    CHECK(a2 / m - (a1 / m) * (a1 / m) == doctest::Approx(b2 / m - (b1 / m) * (b1 / m)).epsilon(0.10));
    const double analytic_mean = (nu * lambda + resid.squaredNorm()) / (nu + 25.0 - 2.0);
    CHECK(a1 / m == doctest::Approx(analytic_mean).epsilon(0.05));
  }
}

namespace {

CausalDataset independent_outcomes(int n, Rng& rng) {
  CausalDataset data;
  data.X = Matrix::NullaryExpr(n, 4, [&] { return rng.uniform(); });
  data.Y.resize(n, 2);
  data.Z.resize(n, 2);
  data.pi_hat = Matrix::Constant(n, 1, 0.5);
  for (int i = 0; i < n; ++i) {
    const double z = rng.bernoulli(0.5) ? 1.0 : 0.0;
    data.Z(i, 0) = data.Z(i, 1) = z;
    data.Y(i, 0) = 2.0 * data.X(i, 0) + 0.8 * z + 0.5 * rng.normal();
    data.Y(i, 1) = -1.5 * data.X(i, 1) - 0.4 * z + 0.5 * rng.normal();
  }
  return data;
}

CausalConfig quick(int iterations, int burn_in) {
  CausalConfig c;
  c.num_mu_trees = 20;
  c.num_tau_trees = 10;
  c.iterations = iterations;
  c.burn_in = burn_in;
  return c;
}

}  // namespace

TEST_CASE("prediction with flipped treatment") {
  Rng data_rng(13);
  const CausalDataset data = independent_outcomes(80, data_rng);
  Rng rng(2);
  const CausalDraws draws = fit_causal(data, quick(20, 10), rng);
  const Matrix X_new = Matrix::NullaryExpr(15, 4, [&] { return data_rng.uniform(); });
  const Matrix pi_new = Matrix::Constant(15, 1, 0.5);
  const CausalPrediction zero = predict_causal(draws, X_new, Matrix::Zero(15, 2), pi_new);
  Matrix mixed = Matrix::Zero(15, 2);
  mixed.col(1).setOnes();
  const CausalPrediction flip = predict_causal(draws, X_new, mixed, pi_new);
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    CHECK(zero.tau[d] == flip.tau[d]);
    CHECK(zero.mu[d] == flip.mu[d]);
    CHECK(zero.y[d].col(0) == flip.y[d].col(0));
    CHECK(zero.y[d] == zero.mu[d]);
    CHECK(flip.y[d].col(1) == zero.mu[d].col(1) + zero.tau[d].col(1));
    CHECK((flip.y[d].col(1) - zero.y[d].col(1)).isApprox(zero.tau[d].col(1), 1e-12));
  }
}

TEST_CASE("standardization round trip") {
  Rng data_rng(17);
  const CausalDataset data = independent_outcomes(100, data_rng);
  CausalDataset shifted = data;
  const double a[2] = {50.0, -3.0};
  const double b[2] = {12.0, 0.25};
  for (int k = 0; k < 2; ++k) shifted.Y.col(k) = (a[k] + b[k] * data.Y.col(k).array()).matrix();
  Rng r1(4), r2(4);
  const CausalDraws x = fit_causal(data, quick(40, 20), r1);
  const CausalDraws y = fit_causal(shifted, quick(40, 20), r2);
  const Matrix ax = ate_draws(x);
  const Matrix ay = ate_draws(y);
  for (int k = 0; k < 2; ++k) {
    CHECK((ay.col(k) - b[k] * ax.col(k)).cwiseAbs().maxCoeff() < 1e-9 * b[k]);
    for (std::size_t d = 0; d < x.draws.size(); ++d) {
      const Vector expect = (a[k] + b[k] * x.draws[d].mu_hat.col(k).array()).matrix();
      CHECK((y.draws[d].mu_hat.col(k) - expect).cwiseAbs().maxCoeff() < 1e-9 * std::abs(a[k]) + 1e-9 * b[k]);
      CHECK(y.draws[d].sigma(k, k) == doctest::Approx(b[k] * b[k] * x.draws[d].sigma(k, k)).epsilon(1e-9));
    }
  }
}

TEST_CASE("joint fit agrees with separate fits on independent outcomes") {
  Rng data_rng(19);
  const CausalDataset data = independent_outcomes(300, data_rng);
  Rng joint_rng(6);
  const Matrix joint = ate_draws(fit_causal(data, quick(600, 300), joint_rng));
  for (int k = 0; k < 2; ++k) {
    CausalDataset single;
    single.X = data.X;
    single.Y = data.Y.col(k);
    single.Z = data.Z.col(k);
    single.pi_hat = data.pi_hat;
    Rng rng(20 + static_cast<std::uint64_t>(k));
    const Matrix sep = ate_draws(fit_causal(single, quick(600, 300), rng));
    const double sd_y = std::sqrt((data.Y.col(k).array() - data.Y.col(k).mean()).square().mean());
    CHECK(std::abs(joint.col(k).mean() - sep.col(0).mean()) < 0.1 * sd_y);
  }
}
