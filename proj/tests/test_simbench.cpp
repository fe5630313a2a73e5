#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvbcf/simbench.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <sstream>

using namespace mvbcf;

TEST_CASE("friedman values") {
  const std::array<double, 10> half{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  CHECK(friedman(half) == doctest::Approx(10.0 * std::sin(M_PI / 4.0) + 7.5));
  CHECK(friedman(half) == doctest::Approx(14.5711).epsilon(1e-5));
  const std::array<double, 10> zeros{};
  CHECK(friedman(zeros) == doctest::Approx(20.0 * 0.25));
  std::array<double, 10> x = half;
  x[7] = 0.9;
  CHECK(friedman(x) == friedman(half));
}

TEST_CASE("pehe") {
  const Vector a = (Vector(3) << 1, 2, 3).finished();
  CHECK(pehe(a, a) == 0.0);
  CHECK(pehe(Vector::Zero(2), (Vector(2) << 3, 4).finished()) == doctest::Approx(std::sqrt(12.5)));
  CHECK(pehe(a, (Vector(3) << 3, 2, 1).finished()) > 0.0);
  CHECK_THROWS_AS(pehe(a, Vector::Zero(2)), Error);
}

TEST_CASE("interval metrics") {
  Rng rng(1);
  const Vector truth = Vector::LinSpaced(50, -1.0, 1.0);
  Matrix same = truth.transpose().replicate(30, 1);
  const IntervalMetrics degenerate = interval_metrics(same, truth);
  CHECK(degenerate.coverage == 1.0);
  CHECK(degenerate.mean_width == 0.0);
  CHECK_THROWS_AS(interval_metrics(same.topRows(19), truth), Error);

  const int units = 1000;
  const int draws = 10000;
  Matrix calibrated(draws, units);
  Vector centre(units);
  for (int i = 0; i < units; ++i) centre(i) = rng.normal();
  for (int i = 0; i < units; ++i) {
    const double shift = rng.normal();  // truth = centre + shift, draws ~ N(centre, 1)
    for (int d = 0; d < draws; ++d) calibrated(d, i) = centre(i) + rng.normal();
    centre(i) += shift;
  }
  const IntervalMetrics at95 = interval_metrics(calibrated, centre, 0.95);
  CHECK(at95.coverage >= 0.92);
  CHECK(at95.coverage <= 0.98);
  CHECK(at95.mean_width == doctest::Approx(2.0 * 1.959964).epsilon(0.02));
  const IntervalMetrics at50 = interval_metrics(calibrated, centre, 0.5);
  CHECK(at50.coverage == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("synthetic data construction") {
  SimSpec spec;
  spec.n_train = 4000;
  spec.n_test = 1000;
  Rng rng(3);
  const SyntheticData data = gen_synthetic(spec, rng);
  for (const auto* pair : {&data.train, &data.test}) {
    const CausalDataset& d = *pair;
    CHECK(d.X.cols() == 10);
    CHECK(d.Y.cols() == 2);
  }
  const SyntheticTruth& t = data.train_truth;
  const Matrix rebuilt =
      t.mu.replicate(1, 2) + t.tau.cwiseProduct(data.train.Z) + t.epsilon;
  CHECK((rebuilt.array() == data.train.Y.array()).all());
  CHECK(t.pi.minCoeff() >= 0.1);
  CHECK(t.pi.maxCoeff() <= 0.9);
  for (int k = 0; k < 2; ++k) {
    CHECK((t.tau.col(k).array() == t.tau_values[k]).all());
    CHECK(std::abs(t.tau_values[k]) <= 0.3 * t.sd_y);
    CHECK(std::abs(t.tau_values[k]) >= 0.05 * t.sd_y);
  }
  CHECK(t.snr >= 1.0);
  CHECK(t.snr <= 2.0);

  // Over all 5000 units the realised sd(f) / sigma equals the drawn snr.
  Vector mu_all(5000);
  mu_all << data.train_truth.mu, data.test_truth.mu;
  const double sd_f = std::sqrt((mu_all.array() - mu_all.mean()).square().sum() / 4999.0);
  CHECK(sd_f / std::sqrt(t.sigma2) == doctest::Approx(t.snr));

  auto corr = [](const Vector& a, const Vector& b) {
    const Vector x = a.array() - a.mean();
    const Vector y = b.array() - b.mean();
    return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
  };
  CHECK(corr(data.train.Z.col(0), t.mu) > 0.0);
  CHECK(corr(data.train.Z.col(1), t.mu) < 0.0);
}

TEST_CASE("heterogeneous moderation factors") {
  SimSpec spec;
  spec.effect_kind = EffectKind::Heterogeneous;
  spec.n_train = 200;
  spec.n_test = 10;
  Rng rng(5);
  const SyntheticData data = gen_synthetic(spec, rng);
  const SyntheticTruth& t = data.train_truth;
  for (int i = 0; i < 200; ++i) {
    const double x6 = data.train.X(i, 5);
    const double x7 = data.train.X(i, 6);
    CHECK(t.tau(i, 0) == doctest::Approx((1.0 + x6 + x7) / 2.0 * t.tau_values[0]));
    CHECK(t.tau(i, 1) == doctest::Approx((2.0 + x7) / 3.0 * t.tau_values[1]));
  }
}

TEST_CASE("spec validation") {
  SimSpec spec;
  spec.snr_band = {0.5, 2.0};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = SimSpec{};
  spec.tau_magnitude_cap = 0.5;
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK_THROWS_AS(parse_effect_kind("mixed"), Error);
}

TEST_CASE("small benchmark is reproducible") {
  SimSpec spec;
  spec.n_train = 80;
  spec.n_test = 40;
  spec.replications = 2;
  spec.seed = 11;
  BenchmarkSettings settings = default_settings();
  for (int* it : {&settings.causal.iterations, &settings.bart.iterations, &settings.propensity.iterations}) *it = 60;
  for (int* b : {&settings.causal.burn_in, &settings.bart.burn_in, &settings.propensity.burn_in}) *b = 30;
  const BenchmarkResult a = run_benchmark(spec, settings);
  const BenchmarkResult b = run_benchmark(spec, settings);
  CHECK(a.failed_fits == 0);
  CHECK(a.summary.size() == 3 * 2 * metric_names().size());
  std::ostringstream x, y;
  write_summary_csv(a, x);
  write_summary_csv(b, y);
  CHECK(x.str() == y.str());
  for (const SummaryRow& row : a.summary) {
    CHECK(row.value >= 0.0);
    CHECK(row.replications == 2);
  }
  std::ostringstream report;
  write_report(a, report);
  CHECK(report.str().find("pehe_tau") != std::string::npos);
}

TEST_CASE("one desk-scale replication" * doctest::skip()) {
  SimSpec spec;
  spec.n_train = 250;
  spec.n_test = 250;
  spec.seed = 2024;
  const auto start = std::chrono::steady_clock::now();
  const ReplicationResult r = run_replication(spec, default_settings(), 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("seconds " << seconds);
  for (const BenchmarkRow& row : r.rows) {
    MESSAGE(to_string(row.method) << " y" << row.outcome + 1 << " pehe " << row.pehe << " width " << row.width_tau
                                  << " cover " << row.coverage_tau << " rmse_mu " << row.rmse_mu);
  }
}
