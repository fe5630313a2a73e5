#include "mvbcf/simbench.hpp"

#include "mvbcf/format.hpp"
#include "mvbcf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace mvbcf {

const char* to_string(EffectKind kind) {
  return kind == EffectKind::Homogeneous ? "homogeneous" : "heterogeneous";
}

EffectKind parse_effect_kind(const std::string& text) {
  if (text == "homogeneous") return EffectKind::Homogeneous;
  if (text == "heterogeneous") return EffectKind::Heterogeneous;
  throw Error(ErrorKind::Configuration, "unknown effect kind '" + text + "'");
}

const char* to_string(Method method) {
  switch (method) {
    case Method::Mvbcf: return "mvbcf";
    case Method::Bcf: return "bcf";
    case Method::Bart: return "bart";
  }
  return "?";
}

void SimSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::Configuration, what); };
  if (n_train < 2 * kMinLeafSize || n_test < 1) fail("n_train must be >= 10 and n_test >= 1");
  if (replications < 1) fail("replications must be positive");
  if (!(snr_band[0] >= 1.0 && snr_band[1] <= 2.0 && snr_band[0] <= snr_band[1])) {
    fail("snr band must satisfy 1 <= low <= high <= 2");
  }
  if (!(tau_magnitude_cap > 0.0 && tau_magnitude_cap <= 0.3)) fail("tau magnitude cap must lie in (0, 0.3]");
  if (!(tau_magnitude_floor >= 0.0 && tau_magnitude_floor <= tau_magnitude_cap)) {
    fail("tau magnitude floor must lie in [0, cap]");
  }
  if (fixed_snr && !(*fixed_snr >= 1.0 && *fixed_snr <= 2.0)) fail("fixed snr must lie in [1, 2]");
  if (fixed_tau) {
    for (double t : *fixed_tau) {
      if (!(std::abs(t) <= tau_magnitude_cap)) fail("fixed tau exceeds the magnitude cap");
    }
  }
}

double friedman(std::span<const double> x) {
  if (x.size() < 5) throw Error(ErrorKind::Shape, "friedman needs at least five coordinates");
  return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] +
         5.0 * x[4];
}

namespace {

double sample_sd(const Vector& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

SyntheticTruth slice(const SyntheticTruth& all, Eigen::Index start, Eigen::Index count) {
  SyntheticTruth t = all;
  t.mu = all.mu.segment(start, count);
  t.tau = all.tau.middleRows(start, count);
  t.pi = all.pi.middleRows(start, count);
  t.epsilon = all.epsilon.middleRows(start, count);
  return t;
}

CausalDataset slice(const CausalDataset& all, Eigen::Index start, Eigen::Index count) {
  CausalDataset d;
  d.X = all.X.middleRows(start, count);
  d.Y = all.Y.middleRows(start, count);
  d.Z = all.Z.middleRows(start, count);
  return d;
}

}  // namespace

SyntheticData gen_synthetic(const SimSpec& spec, Rng& rng) {
  spec.validate();
  const int n = spec.n_train + spec.n_test;
  const int d = 10;
  CausalDataset all;
  SyntheticTruth truth;
  all.X.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) all.X(i, c) = rng.uniform();
  }
  truth.mu.resize(n);
  std::vector<double> row(d);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) row[c] = all.X(i, c);
    truth.mu(i) = friedman(row);
  }

  const double lo = truth.mu.minCoeff();
  const double range = truth.mu.maxCoeff() - lo;
  truth.pi.resize(n, 2);
  all.Z.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double u = range > 0.0 ? (truth.mu(i) - lo) / range : 0.5;
    truth.pi(i, 0) = 0.1 + 0.8 * u;
    truth.pi(i, 1) = 0.1 + 0.8 * (1.0 - u);
    for (int k = 0; k < 2; ++k) all.Z(i, k) = rng.bernoulli(truth.pi(i, k)) ? 1.0 : 0.0;
  }

  const double sd_f = sample_sd(truth.mu);
  truth.snr = spec.fixed_snr ? *spec.fixed_snr : spec.snr_band[0] + (spec.snr_band[1] - spec.snr_band[0]) * rng.uniform();
  const double sigma = sd_f / truth.snr;
  truth.sigma2 = spec.zero_noise ? 0.0 : sigma * sigma;
  truth.sd_y = sd_f * std::sqrt(1.0 + 1.0 / (truth.snr * truth.snr));
  for (int k = 0; k < 2; ++k) {
    if (spec.fixed_tau) {
      truth.tau_values[k] = (*spec.fixed_tau)[k] * truth.sd_y;
    } else {
      const double magnitude =
          spec.tau_magnitude_floor + (spec.tau_magnitude_cap - spec.tau_magnitude_floor) * rng.uniform();
      truth.tau_values[k] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * magnitude * truth.sd_y;
    }
  }

  truth.tau.resize(n, 2);
  truth.epsilon.resize(n, 2);
  all.Y.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    if (spec.effect_kind == EffectKind::Homogeneous) {
      truth.tau(i, 0) = truth.tau_values[0];
      truth.tau(i, 1) = truth.tau_values[1];
    } else {
      truth.tau(i, 0) = (1.0 + all.X(i, 5) + all.X(i, 6)) / 2.0 * truth.tau_values[0];
      truth.tau(i, 1) = (2.0 + all.X(i, 6)) / 3.0 * truth.tau_values[1];
    }
    for (int k = 0; k < 2; ++k) {
      truth.epsilon(i, k) = spec.zero_noise ? 0.0 : sigma * rng.normal();
      all.Y(i, k) = truth.mu(i) + truth.tau(i, k) * all.Z(i, k) + truth.epsilon(i, k);
    }
  }

  return {slice(all, 0, spec.n_train), slice(all, spec.n_train, spec.n_test), slice(truth, 0, spec.n_train),
          slice(truth, spec.n_train, spec.n_test)};
}

double pehe(const Vector& tau_true, const Vector& tau_hat) {
  if (tau_true.size() != tau_hat.size()) throw Error(ErrorKind::Shape, "pehe arguments differ in length");
  if (tau_true.size() == 0) throw Error(ErrorKind::EmptyInput, "pehe needs at least one unit");
  return std::sqrt((tau_true - tau_hat).squaredNorm() / static_cast<double>(tau_true.size()));
}

IntervalMetrics interval_metrics(const Matrix& draws, const Vector& truth, double level) {
  if (draws.rows() < kMinIntervalDraws) {
    throw Error(ErrorKind::InsufficientSample, "interval metrics need at least " +
                                                   std::to_string(kMinIntervalDraws) + " draws per unit");
  }
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidParameter, "level must lie in (0, 1)");
  const kernels::UnitScores s = kernels::score_units(draws, truth, level);
  IntervalMetrics out;
  out.coverage = ((truth.array() >= s.lower.array()) && (truth.array() <= s.upper.array())).cast<double>().mean();
  out.mean_width = (s.upper - s.lower).mean();
  return out;
}

BenchmarkRow score_method(Method method, int outcome, const MethodPredictions& pred, const Vector& mu_true,
                          const Vector& tau_true, const Vector& y_observed) {
  BenchmarkRow row;
  row.method = method;
  row.outcome = outcome;
  auto posterior_mean = [](const Matrix& m) { return Vector(m.colwise().mean().transpose()); };
  row.rmse_mu = pehe(mu_true, posterior_mean(pred.mu));
  row.pehe = pehe(tau_true, posterior_mean(pred.tau));
  row.rmse_y = pehe(y_observed, posterior_mean(pred.y_fit));
  row.crps_mu = kernels::score_units(pred.mu, mu_true, 0.95).crps.mean();
  const kernels::UnitScores tau = kernels::score_units(pred.tau, tau_true, 0.95);
  row.crps_tau = tau.crps.mean();
  row.coverage_tau =
      ((tau_true.array() >= tau.lower.array()) && (tau_true.array() <= tau.upper.array())).cast<double>().mean();
  row.width_tau = (tau.upper - tau.lower).mean();
  row.crps_y = kernels::score_units(pred.y, y_observed, 0.95).crps.mean();
  return row;
}

BenchmarkSettings default_settings() {
  BenchmarkSettings s;
  s.causal.num_mu_trees = 50;
  s.causal.num_tau_trees = 20;
  s.causal.iterations = 1000;
  s.causal.burn_in = 500;
  s.bart.num_trees = 70;
  s.bart.iterations = 1000;
  s.bart.burn_in = 500;
  s.propensity.num_trees = 50;
  s.propensity.iterations = 1000;
  s.propensity.burn_in = 500;
  return s;
}

namespace {

// Random streams of one replication; fixed indices keep each method's draws
// independent of which other methods run.
enum Stream : std::uint64_t {
  kData = 0,
  kPropensity = 1,  // + treatment column
  kMvbcf = 3,
  kBcf = 4,         // + outcome
  kBart = 6,        // + outcome
  kNoise = 8,       // + method
};

Matrix column_draws(const std::vector<Matrix>& per_draw, int k) {
  Matrix out(static_cast<Eigen::Index>(per_draw.size()), per_draw.empty() ? 0 : per_draw[0].rows());
  for (std::size_t d = 0; d < per_draw.size(); ++d) out.row(static_cast<Eigen::Index>(d)) = per_draw[d].col(k).transpose();
  return out;
}

// Predictive outcome draws: y_fit plus N(0, Sigma_d) noise for each unit.
std::vector<Matrix> add_noise(const std::vector<Matrix>& y_fit, const CausalDraws& draws, Rng& rng) {
  std::vector<Matrix> out = y_fit;
  for (std::size_t d = 0; d < out.size(); ++d) {
    const SymMatrix sigma(draws.draws[d].sigma);
    const Vector zero = Vector::Zero(sigma.dim());
    for (Eigen::Index i = 0; i < out[d].rows(); ++i) out[d].row(i) += sample_mvn(zero, sigma, rng).transpose();
  }
  return out;
}

std::vector<MethodPredictions> causal_predictions(const CausalDraws& draws, const CausalDataset& test,
                                                  const Matrix& pi_test, Rng& noise_rng) {
  const CausalPrediction pred = predict_causal(draws, test.X, test.Z, pi_test);
  const std::vector<Matrix> y = add_noise(pred.y, draws, noise_rng);
  std::vector<MethodPredictions> out;
  for (int k = 0; k < draws.p; ++k) {
    out.push_back({column_draws(pred.mu, k), column_draws(pred.tau, k), column_draws(pred.y, k), column_draws(y, k)});
  }
  return out;
}

CausalDataset outcome_subset(const CausalDataset& data, int k) {
  CausalDataset d;
  d.X = data.X;
  d.Y = data.Y.col(k);
  d.Z = data.Z.col(k);
  if (data.pi_hat.size() != 0) d.pi_hat = data.pi_hat.col(k);
  return d;
}

}  // namespace

ReplicationResult run_replication(const SimSpec& spec, const BenchmarkSettings& settings, int replication) {
  ReplicationResult result;
  result.replication = replication;
  const std::uint64_t seed = Rng::derive(spec.seed, static_cast<std::uint64_t>(replication));
  Rng data_rng(seed, kData);
  SyntheticData data = gen_synthetic(spec, data_rng);
  const int p = 2;

  auto record_failure = [&](Method m, const std::exception& e) {
    result.failures.push_back(std::string(to_string(m)) + ": " + e.what());
  };

  const bool needs_propensity = std::any_of(settings.methods.begin(), settings.methods.end(),
                                            [](Method m) { return m != Method::Bart; });
  Matrix pi_test(spec.n_test, p);
  if (needs_propensity) {
    try {
      data.train.pi_hat.resize(spec.n_train, p);
      for (int k = 0; k < p; ++k) {
        Rng rng(seed, kPropensity + k);
        const PropensityModel model = fit_propensity_model(data.train.Z.col(k), data.train.X, settings.propensity, rng);
        data.train.pi_hat.col(k) = model.pi_hat;
        pi_test.col(k) = predict_propensity(model, data.test.X);
      }
    } catch (const std::exception& e) {
      for (Method m : settings.methods) {
        if (m != Method::Bart) record_failure(m, e);
      }
      data.train.pi_hat = Matrix();
    }
  }

  for (Method method : settings.methods) {
    try {
      switch (method) {
        case Method::Mvbcf: {
          if (data.train.pi_hat.size() == 0) break;
          Rng rng(seed, kMvbcf);
          const CausalDraws draws = fit_causal(data.train, settings.causal, rng);
          Rng noise(seed, kNoise + 0);
          const auto preds = causal_predictions(draws, data.test, pi_test, noise);
          for (int k = 0; k < p; ++k) {
            result.rows.push_back(score_method(method, k, preds[k], data.test_truth.mu, data.test_truth.tau.col(k),
                                               data.test.Y.col(k)));
          }
          break;
        }
        case Method::Bcf: {
          if (data.train.pi_hat.size() == 0) break;
          Rng noise(seed, kNoise + 1);
          for (int k = 0; k < p; ++k) {
            Rng rng(seed, kBcf + k);
            const CausalDraws draws = fit_causal(outcome_subset(data.train, k), settings.causal, rng);
            const CausalDataset test = outcome_subset(data.test, k);
            const auto preds = causal_predictions(draws, test, pi_test.col(k), noise);
            result.rows.push_back(score_method(method, k, preds[0], data.test_truth.mu, data.test_truth.tau.col(k),
                                               data.test.Y.col(k)));
          }
          break;
        }
        case Method::Bart: {
          Rng noise(seed, kNoise + 2);
          for (int k = 0; k < p; ++k) {
            Rng rng(seed, kBart + k);
            const SLearner fit = fit_s_learner(data.train.Y.col(k), data.train.X, data.train.Z.col(k), settings.bart, rng);
            MethodPredictions pred;
            pred.mu = s_learner_predict(fit, data.test.X, Vector::Zero(spec.n_test));
            pred.tau = s_learner_tau(fit, data.test.X);
            pred.y_fit = s_learner_predict(fit, data.test.X, data.test.Z.col(k));
            pred.y = pred.y_fit;
            for (Eigen::Index d = 0; d < pred.y.rows(); ++d) {
              const double sigma = fit.sd * fit.draws.draws[static_cast<std::size_t>(d)].sigma;
              for (Eigen::Index i = 0; i < pred.y.cols(); ++i) pred.y(d, i) += sigma * noise.normal();
            }
            result.rows.push_back(score_method(method, k, pred, data.test_truth.mu, data.test_truth.tau.col(k),
                                               data.test.Y.col(k)));
          }
          break;
        }
      }
    } catch (const std::exception& e) {
      record_failure(method, e);
      std::erase_if(result.rows, [&](const BenchmarkRow& r) { return r.method == method; });
    }
  }
  return result;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"rmse_mu", "pehe_tau", "rmse_y",       "crps_mu",
                                              "crps_tau", "crps_y",   "coverage_tau", "width_tau"};
  return names;
}

double metric_value(const BenchmarkRow& row, const std::string& metric) {
  if (metric == "rmse_mu") return row.rmse_mu;
  if (metric == "pehe_tau") return row.pehe;
  if (metric == "rmse_y") return row.rmse_y;
  if (metric == "crps_mu") return row.crps_mu;
  if (metric == "crps_tau") return row.crps_tau;
  if (metric == "crps_y") return row.crps_y;
  if (metric == "coverage_tau") return row.coverage_tau;
  if (metric == "width_tau") return row.width_tau;
  throw Error(ErrorKind::Configuration, "unknown metric '" + metric + "'");
}

BenchmarkResult run_benchmark(const SimSpec& spec, const BenchmarkSettings& settings) {
  spec.validate();
  BenchmarkResult result;
  result.spec = spec;
  result.replications.resize(static_cast<std::size_t>(spec.replications));
#pragma omp parallel for schedule(dynamic, 1)
  for (int r = 0; r < spec.replications; ++r) {
    try {
      result.replications[static_cast<std::size_t>(r)] = run_replication(spec, settings, r);
    } catch (const std::exception& e) {
      ReplicationResult failed;
      failed.replication = r;
      failed.failures.push_back(std::string("data: ") + e.what());
      result.replications[static_cast<std::size_t>(r)] = std::move(failed);
    }
  }

  for (const ReplicationResult& rep : result.replications) result.failed_fits += static_cast<int>(rep.failures.size());
  for (Method method : settings.methods) {
    for (int k = 0; k < 2; ++k) {
      for (const std::string& metric : metric_names()) {
        double sum = 0.0;
        int count = 0;
        for (const ReplicationResult& rep : result.replications) {
          for (const BenchmarkRow& row : rep.rows) {
            if (row.method != method || row.outcome != k) continue;
            sum += metric_value(row, metric);
            ++count;
          }
        }
        if (count > 0) result.summary.push_back({method, k, metric, sum / count, count});
      }
    }
  }
  return result;
}

std::optional<double> summary_value(const BenchmarkResult& result, Method method, int outcome,
                                    const std::string& metric) {
  for (const SummaryRow& row : result.summary) {
    if (row.method == method && row.outcome == outcome && row.metric == metric) return row.value;
  }
  return std::nullopt;
}

void write_summary_csv(const BenchmarkResult& result, std::ostream& out) {
  out << "method,outcome,metric,value,replications\n";
  for (const SummaryRow& row : result.summary) {
    out << to_string(row.method) << ",y" << row.outcome + 1 << ',' << row.metric << ',' << format_number(row.value)
        << ',' << row.replications << '\n';
  }
}

void write_replications_csv(const BenchmarkResult& result, std::ostream& out) {
  out << "replication,method,outcome";
  for (const std::string& m : metric_names()) out << ',' << m;
  out << '\n';
  for (const ReplicationResult& rep : result.replications) {
    for (const BenchmarkRow& row : rep.rows) {
      out << rep.replication << ',' << to_string(row.method) << ",y" << row.outcome + 1;
      for (const std::string& m : metric_names()) out << ',' << format_number(metric_value(row, m));
      out << '\n';
    }
  }
}

void write_report(const BenchmarkResult& result, std::ostream& out) {
  const SimSpec& spec = result.spec;
  out << to_string(spec.effect_kind) << " treatment effect, " << spec.replications << " replications, n_train "
      << spec.n_train << ", n_test " << spec.n_test << ", seed " << spec.seed << "\n";
  if (result.failed_fits > 0) out << "failed fits excluded: " << result.failed_fits << "\n";

  std::vector<std::pair<Method, int>> columns;
  for (const SummaryRow& row : result.summary) {
    const std::pair<Method, int> key{row.method, row.outcome};
    if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
  }
  out << std::left << std::setw(14) << "metric";
  for (const auto& [m, k] : columns) {
    std::ostringstream label;
    label << to_string(m) << ":y" << k + 1;
    out << std::right << std::setw(11) << label.str();
  }
  out << "\n";
  for (const std::string& metric : metric_names()) {
    out << std::left << std::setw(14) << metric;
    for (const auto& [m, k] : columns) {
      const auto v = summary_value(result, m, k, metric);
      std::ostringstream cell;
      if (v) cell << std::fixed << std::setprecision(3) << *v;
      else cell << "-";
      out << std::right << std::setw(11) << cell.str();
    }
    out << "\n";
  }
}

}  // namespace mvbcf
