#pragma once

#include "mvbcf/stats.hpp"
#include "mvbcf/tree.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mvbcf {

/// Multivariate normal prior N(mean, cov) on a leaf parameter vector.
struct LeafPrior {
  Vector mean;
  SymMatrix cov;

  static LeafPrior isotropic(int p, double variance) {
    return {Vector::Zero(p), SymMatrix::identity(p, variance)};
  }
};

struct WishartPrior {
  double df = 0.0;
  SymMatrix scale;
};

/// Noise covariance together with its inverse and log-determinant.
struct NoiseState {
  SymMatrix sigma;
  PrecisionCache precision;

  explicit NoiseState(SymMatrix s)
      : sigma(std::move(s)), precision(PrecisionCache::from(sigma, "residual covariance")) {}
};

/// Prior with cached precision, prior-mean precision product and log|cov|.
struct LeafPriorState {
  Vector mean;
  Matrix precision;
  Vector precision_mean;
  double mean_quad = 0.0;  // mean^T precision mean
  double log_det_cov = 0.0;

  explicit LeafPriorState(const LeafPrior& prior);
};

// Closed-form leaf marginals (all normalising constants included) and
// conjugate leaf draws. A mu leaf sees residuals R_i ~ N(theta, Sigma); a tau
// leaf sees R_i ~ N(diag(Z_i) theta, Sigma).
double mu_log_marginal(std::span<const LeafStats> stats, const NoiseState& noise,
                       const LeafPriorState& prior);
double tau_log_marginal(std::span<const LeafStats> stats, const NoiseState& noise,
                        const LeafPriorState& prior);
double mu_log_marginal(std::span<const LeafStats> stats, const SymMatrix& sigma,
                       const LeafPrior& prior);
double tau_log_marginal(std::span<const LeafStats> stats, const SymMatrix& sigma,
                        const LeafPrior& prior);

/// Posterior N(mean, cov) of one leaf parameter.
struct LeafPosterior {
  Vector mean;
  Matrix cov;
};
LeafPosterior mu_leaf_posterior(const LeafStats& stats, const NoiseState& noise,
                                const LeafPriorState& prior);
LeafPosterior tau_leaf_posterior(const LeafStats& stats, const NoiseState& noise,
                                 const LeafPriorState& prior);

Vector sample_mu_leaf(const LeafStats& stats, const NoiseState& noise,
                      const LeafPriorState& prior, Rng& rng);
Vector sample_tau_leaf(const LeafStats& stats, const NoiseState& noise,
                       const LeafPriorState& prior, Rng& rng);
Vector sample_mu_leaf(const LeafStats& stats, const SymMatrix& sigma, const LeafPrior& prior,
                      Rng& rng);
Vector sample_tau_leaf(const LeafStats& stats, const SymMatrix& sigma, const LeafPrior& prior,
                       Rng& rng);

/// Draw from Inverse-Wishart(df + n, scale + sum_i (y_i - yhat_i)(y_i - yhat_i)^T).
SymMatrix update_sigma_matrix(const Matrix& Y, const Matrix& Y_hat, const WishartPrior& prior,
                              Rng& rng);

struct CausalConfig {
  int p = 0;  // 0: taken from the data
  int num_mu_trees = 50;
  int num_tau_trees = 20;
  int iterations = 1000;  // including burn-in
  int burn_in = 500;
  TreePriorConfig mu_tree_prior{0.95, 2.0};
  TreePriorConfig tau_tree_prior{0.25, 3.0};
  std::optional<double> mu_leaf_variance;   // default 1 / num_mu_trees
  std::optional<double> tau_leaf_variance;  // default 1 / (4 num_tau_trees)
  std::optional<Vector> mu_prior_mean;      // default zero
  std::optional<Vector> tau_prior_mean;     // default zero
  std::optional<double> wishart_df;         // default p + 2
  std::optional<double> wishart_scale;      // default: mean residual variance of a constant fit
  std::vector<int> mu_covariates;           // empty: all columns of X
  std::vector<int> tau_covariates;          // empty: all columns of X
  MoveWeights moves;

  double mu_variance() const { return mu_leaf_variance.value_or(1.0 / num_mu_trees); }
  double tau_variance() const { return tau_leaf_variance.value_or(0.25 / num_tau_trees); }
  void validate(int p_data, int num_x) const;
};

struct CausalDataset {
  Matrix X;        // n x d
  Matrix Y;        // n x p, original scale
  Matrix Z;        // n x p, entries 0/1
  Matrix pi_hat;   // n x q propensity columns, appended to the mu covariates
  Vector weights;  // n, default ones

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return Y.cols(); }
  void validate() const;
};

/// Column selection for the two ensembles. mu design = [X(:, mu_columns), pi_hat];
/// tau design = X(:, tau_columns).
struct CovariateLayout {
  int num_x = 0;
  int num_pi = 0;
  std::vector<int> mu_columns;
  std::vector<int> tau_columns;

  Matrix mu_design(const Matrix& X, const Matrix& pi_hat) const;
  Matrix tau_design(const Matrix& X) const;
};

/// Per-component affine map between the original and standardised outcome.
struct Standardization {
  Vector mean;
  Vector sd;
};

struct CausalDraw {
  int chain = 0;      // index into CausalDraws::chains
  int iteration = 0;  // 1-based sampler iteration
  Matrix mu_hat;      // n x p, original scale
  Matrix tau_hat;     // n x p, original scale
  Matrix y_hat;       // mu_hat + tau_hat o Z
  Matrix sigma;       // p x p, original scale
  std::vector<Tree> mu_trees;   // standardised scale
  std::vector<Tree> tau_trees;  // standardised scale
};

struct ChainInfo {
  int id = 0;
  Standardization scale;
};

struct CausalDraws {
  int n = 0;
  int p = 0;
  CovariateLayout layout;
  std::vector<ChainInfo> chains;
  std::vector<CausalDraw> draws;
};

Standardization standardize_columns(const Matrix& Y);

/// Generalised BCF backfitting sampler; p = 1 is univariate BCF.
CausalDraws fit_causal(const CausalDataset& data, const CausalConfig& config, Rng& rng,
                       int chain_id = 0);

struct CausalPrediction {
  std::vector<Matrix> mu;   // per draw, n_new x p
  std::vector<Matrix> tau;
  std::vector<Matrix> y;
};

/// Replays the stored ensembles on new units.
CausalPrediction predict_causal(const CausalDraws& draws, const Matrix& X_new,
                                const Matrix& Z_new, const Matrix& pi_new);

/// Replays only the tau ensembles (original scale), one n_new x p matrix per draw.
std::vector<Matrix> predict_tau(const CausalDraws& draws, const Matrix& X_new);

/// ATE per kept draw and component (draws x p), unweighted mean over units.
Matrix ate_draws(const CausalDraws& draws);

}  // namespace mvbcf
