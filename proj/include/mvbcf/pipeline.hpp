#pragma once

#include "mvbcf/bart.hpp"
#include "mvbcf/causal.hpp"
#include "mvbcf/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mvbcf {

enum class CovariateType { Numeric, Categorical };

struct CovariateSpec {
  std::string name;
  CovariateType type = CovariateType::Numeric;
};

struct AnalysisConfig {
  std::string data_path;
  /// One group per plausible value; each lists the p outcome columns.
  std::vector<std::vector<std::string>> outcome_groups;
  /// Labels of the p components; defaults to the first group's columns.
  std::vector<std::string> component_names;
  /// Either one column shared by every component, or p columns.
  std::vector<std::string> treatments;
  std::vector<CovariateSpec> covariates;
  std::optional<std::string> weight;
  bool use_propensity = true;
  BartConfig propensity;
  CausalConfig causal;
  int chains_per_group = 1;
  std::string output_dir = "run";
  int grid_size = 20;
  int max_units = 100;

  AnalysisConfig();
  int p() const { return outcome_groups.empty() ? 0 : static_cast<int>(outcome_groups.front().size()); }
  std::vector<std::string> components() const;
  void validate() const;
};

/// Relative data paths are resolved against `base_dir`.
AnalysisConfig analysis_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const AnalysisConfig& c);
AnalysisConfig load_analysis_config(const std::filesystem::path& path);

/// One column of the encoded covariate matrix.
struct EncodedColumn {
  enum class Kind { Numeric, MissingIndicator, Level };
  std::string name;    // "age", "age_missing", "region=north"
  std::string source;  // covariate it came from
  Kind kind = Kind::Numeric;
  std::string level;   // Level only
};

struct AnalysisData {
  Matrix X;        // n x d, encoded
  Matrix Z;        // n x p
  Matrix T;        // n x q, raw treatment columns
  Vector weights;  // n
  std::vector<Matrix> outcomes;  // per group, n x p
  std::vector<EncodedColumn> columns;
  std::vector<int> source_rows;  // 1-based data row of each retained unit
  int rows_read = 0;
  int rows_dropped = 0;

  /// Dataset of one outcome group; pi_hat is attached by the caller.
  CausalDataset group(int g) const;
};

/// Missing numeric covariates get the column median plus a "<name>_missing"
/// indicator; categoricals are one-hot over sorted levels with an explicit
/// "missing" level. Rows missing any outcome or treatment are dropped.
AnalysisData load_csv(const std::filesystem::path& path, const AnalysisConfig& config);
AnalysisData load_csv(std::istream& in, const AnalysisConfig& config);

struct AteReport {
  int p = 0;
  Vector mean;   // p
  Vector lower;  // p, 2.5% quantile
  Vector upper;  // p, 97.5% quantile
  Matrix draws;  // m x p; each row is one joint draw across components
  std::vector<int> chain;
  std::vector<int> iteration;
};

/// Per draw and component, sum_i w_i tau_i / sum_i w_i over all n units.
AteReport weighted_ate(const CausalDraws& draws, const Vector& weights);

/// Concatenates chains in the given order; chain ids must be distinct.
CausalDraws pool_chains(const std::vector<CausalDraws>& chains);

struct ModerationCurve {
  std::string covariate;
  std::vector<double> grid;
  std::vector<std::string> labels;  // grid values as text (levels for categoricals)
  std::vector<int> units;           // rows of X used for the ICE curves
  std::vector<Matrix> ice;          // per component, units x grid
  Matrix pdp;                       // grid x p
};

/// Grid over one encoded column: evenly spaced over its observed range.
std::vector<double> numeric_grid(const Matrix& X, int column, int size);

/// ICE/PDP for one encoded column set to each grid value in turn.
ModerationCurve moderation_curves(const CausalDraws& draws, const Matrix& X, int column,
                                  const std::vector<double>& grid, const std::vector<int>& units);

/// Name lookup over encoded columns; categoricals vary the level indicators.
/// At most `max_units` rows, sampled without replacement, enter the ICE set.
ModerationCurve moderation_curves(const CausalDraws& draws, const Matrix& X,
                                  const std::vector<EncodedColumn>& columns,
                                  const std::string& covariate, int grid_size, int max_units, Rng& rng);

void write_moderation_csv(const ModerationCurve& curve, const std::vector<std::string>& components,
                          std::ostream& out);

struct AnalysisRun {
  AnalysisConfig config;
  std::uint64_t seed = 0;
  AnalysisData data;
  Matrix pi_hat;                 // n x q, empty without a propensity model
  std::vector<int> chain_group;  // outcome group of each chain
  std::vector<CausalDraws> chains;

  CausalDraws pooled() const { return pool_chains(chains); }
};

/// Loads the data, fits one propensity model per treatment column and runs
/// chains_per_group chains per outcome group; chains run concurrently.
AnalysisRun fit_analysis(const AnalysisConfig& config, std::uint64_t seed);
AnalysisRun fit_analysis(const AnalysisConfig& config, AnalysisData data, std::uint64_t seed);

/// Removes everything it tracked unless committed.
class OutputGuard {
 public:
  explicit OutputGuard(std::filesystem::path dir);
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard();

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path track(const std::string& name);
  void commit() { committed_ = true; }

 private:
  std::filesystem::path dir_;
  bool created_ = false;
  bool committed_ = false;
  std::vector<std::filesystem::path> files_;
};

// Run directory: run.json, units.csv, covariates.csv, and per chain c
// draws_chain<c>.csv, tau_chain<c>.csv, trees_chain<c>.txt.
void save_run(const AnalysisRun& run, const std::filesystem::path& dir);
AnalysisRun load_run(const std::filesystem::path& dir);

void write_ate_csv(const AteReport& ate, const std::vector<std::string>& components, std::ostream& out);
void write_ate_draws_csv(const AteReport& ate, const std::vector<std::string>& components,
                         std::ostream& out);

/// "3672 (89%)"
std::string format_group_size(int count, int total);

/// Plain-text summary: group sizes per treatment and ATE with 95% interval.
void write_run_report(const AnalysisRun& run, const AteReport& ate, std::ostream& out);

}  // namespace mvbcf
