#pragma once

#include "mvbcf/bart.hpp"
#include "mvbcf/causal.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mvbcf {

enum class EffectKind { Homogeneous, Heterogeneous };
const char* to_string(EffectKind kind);
EffectKind parse_effect_kind(const std::string& text);

struct SimSpec {
  EffectKind effect_kind = EffectKind::Homogeneous;
  int n_train = 500;
  int n_test = 500;
  int replications = 1;
  std::array<double, 2> snr_band{1.0, 2.0};
  double tau_magnitude_cap = 0.3;
  double tau_magnitude_floor = 0.05;
  std::uint64_t seed = 0;
  // Overrides used by recovery checks; unset means "draw as usual".
  bool zero_noise = false;
  std::optional<double> fixed_snr;
  std::optional<std::array<double, 2>> fixed_tau;  // in units of sd(y)

  void validate() const;
};

/// Friedman's function of the first five coordinates; the rest are ignored.
double friedman(std::span<const double> x);

struct SyntheticTruth {
  Vector mu;       // n
  Matrix tau;      // n x 2
  Matrix pi;       // n x 2, generating propensities
  Matrix epsilon;  // n x 2
  std::array<double, 2> tau_values{};  // tau_1, tau_2 before moderation
  double sigma2 = 0.0;
  double snr = 0.0;
  double sd_y = 0.0;  // approximation used to scale tau
};

struct SyntheticData {
  CausalDataset train;  // pi_hat left empty
  CausalDataset test;
  SyntheticTruth train_truth;
  SyntheticTruth test_truth;
};

/// X ~ U[0,1]^10 drawn for train and test together; propensities are a
/// linear map of mu onto [0.1, 0.9] (increasing for Z1, decreasing for Z2).
SyntheticData gen_synthetic(const SimSpec& spec, Rng& rng);

double pehe(const Vector& tau_true, const Vector& tau_hat);

struct IntervalMetrics {
  double coverage = 0.0;
  double mean_width = 0.0;
};

inline constexpr int kMinIntervalDraws = 20;

/// `draws` is m x n. Equal-tailed intervals at `level`.
IntervalMetrics interval_metrics(const Matrix& draws, const Vector& truth, double level = 0.95);

enum class Method { Mvbcf, Bcf, Bart };
const char* to_string(Method method);

/// Posterior draws of one method on the test units for one outcome component.
struct MethodPredictions {
  Matrix mu;     // m x n_test
  Matrix tau;    // m x n_test
  Matrix y_fit;  // m x n_test, regression function at the observed treatment
  Matrix y;      // m x n_test, predictive (noise added)
};

struct BenchmarkRow {
  Method method = Method::Mvbcf;
  int outcome = 0;  // 0-based
  double rmse_mu = 0.0;
  double pehe = 0.0;
  double rmse_y = 0.0;
  double crps_mu = 0.0;
  double crps_tau = 0.0;
  double crps_y = 0.0;
  double coverage_tau = 0.0;
  double width_tau = 0.0;
};

/// Scores one method/outcome on the test set.
BenchmarkRow score_method(Method method, int outcome, const MethodPredictions& pred, const Vector& mu_true,
                          const Vector& tau_true, const Vector& y_observed);

struct BenchmarkSettings {
  CausalConfig causal;     // mvbcf and per-outcome bcf
  BartConfig bart;         // s-learner
  BartConfig propensity;   // probit propensity model
  std::vector<Method> methods{Method::Mvbcf, Method::Bcf, Method::Bart};
};

/// Settings of the published study: 50/20 trees, 70 BART trees, 500 + 500 iterations.
BenchmarkSettings default_settings();

struct ReplicationResult {
  int replication = 0;
  std::vector<BenchmarkRow> rows;
  std::vector<std::string> failures;  // "method: message"
};

/// Generates, fits and scores one replication with its own random stream.
ReplicationResult run_replication(const SimSpec& spec, const BenchmarkSettings& settings, int replication);

struct SummaryRow {
  Method method = Method::Mvbcf;
  int outcome = 0;
  std::string metric;
  double value = 0.0;
  int replications = 0;  // successful replications averaged
};

struct BenchmarkResult {
  SimSpec spec;
  std::vector<ReplicationResult> replications;
  std::vector<SummaryRow> summary;
  int failed_fits = 0;
};

/// Replications run in parallel; aggregation is in replication order.
BenchmarkResult run_benchmark(const SimSpec& spec, const BenchmarkSettings& settings);

const std::vector<std::string>& metric_names();
double metric_value(const BenchmarkRow& row, const std::string& metric);
/// Mean of `metric` for a method/outcome in the summary, or nullopt.
std::optional<double> summary_value(const BenchmarkResult& result, Method method, int outcome,
                                    const std::string& metric);

/// `method,outcome,metric,value,replications` with shortest round-trip numbers.
void write_summary_csv(const BenchmarkResult& result, std::ostream& out);
/// Per-replication rows, one line per replication/method/outcome.
void write_replications_csv(const BenchmarkResult& result, std::ostream& out);
/// Text table laid out like the published results table.
void write_report(const BenchmarkResult& result, std::ostream& out);

}  // namespace mvbcf
