#pragma once

#include "mvbcf/stats.hpp"
#include "mvbcf/tree.hpp"

#include <optional>
#include <vector>

namespace mvbcf {

/// 1/sigma^2 ~ Gamma(nu / 2, nu * lambda / 2).
struct NoisePrior {
  double nu = 3.0;
  double lambda = 1.0;
};

struct BartConfig {
  int num_trees = 70;
  int iterations = 1000;  // including burn-in
  int burn_in = 500;
  TreePriorConfig tree_prior{0.95, 2.0};
  std::optional<double> leaf_sd;  // default 1 / sqrt(num_trees)
  double nu = 3.0;
  std::optional<double> lambda;   // default: calibrated on the outcome
  MoveWeights moves;

  double leaf_variance() const { return leaf_sd ? *leaf_sd * *leaf_sd : 1.0 / num_trees; }
  void validate() const;
};

/// lambda such that P(sigma < sd_y) = `prob` under the scaled inverse chi-squared prior.
double calibrate_lambda(double sd_y, double nu, double prob = 0.9);

/// Draws sigma^2 with 1/sigma^2 ~ Gamma(nu/2 + n/2, nu lambda/2 + sum r^2 / 2).
double update_sigma_univariate(const Vector& residuals, const NoisePrior& prior, Rng& rng);

/// Log integrated likelihood of one scalar leaf: r_i ~ N(m, sigma2), m ~ N(0, leaf_var).
double bart_leaf_log_marginal(int count, double sum, double sum_sq, double sigma2, double leaf_var);

struct BartDraw {
  int iteration = 0;
  double sigma = 0.0;
  Vector y_hat;  // offset + sum of tree contributions
  std::vector<Tree> trees;
};

struct BartDraws {
  int n = 0;
  double offset = 0.0;
  NoisePrior noise_prior;
  std::vector<BartDraw> draws;
};

/// Backfitting MCMC for a standardised outcome.
BartDraws fit_bart(const Vector& y, const Matrix& X, const BartConfig& config, Rng& rng);

/// Sum-of-trees prediction for every kept draw (draws x n_new), including the offset.
Matrix predict_bart(const BartDraws& draws, const Matrix& X_new);

struct PropensityModel {
  Vector pi_hat;  // training units, posterior mean, clipped
  BartDraws draws;
};

inline constexpr double kPropensityFloor = 0.025;
inline constexpr double kPropensityCeiling = 0.975;

/// Probit BART through truncated-normal latent variables.
PropensityModel fit_propensity_model(const Vector& z, const Matrix& X, const BartConfig& config,
                                     Rng& rng);
Vector fit_propensity(const Vector& z, const Matrix& X, const BartConfig& config, Rng& rng);
/// Clipped posterior mean P(Z = 1 | x) at new rows.
Vector predict_propensity(const PropensityModel& model, const Matrix& X_new);

/// BART on [X, z]; the outcome is standardised internally.
struct SLearner {
  BartDraws draws;
  double mean = 0.0;
  double sd = 1.0;
  int num_x = 0;
};

SLearner fit_s_learner(const Vector& y, const Matrix& X, const Vector& z, const BartConfig& config,
                       Rng& rng);
/// Posterior draws of the regression function at (x, z), original scale (draws x n_new).
Matrix s_learner_predict(const SLearner& fit, const Matrix& X_new, const Vector& z);
/// yhat(z = 1) - yhat(z = 0) per draw and unit (draws x n_new), original scale.
Matrix s_learner_tau(const SLearner& fit, const Matrix& X_new);
Matrix s_learner_tau(const Vector& y, const Matrix& X, const Vector& z, const BartConfig& config,
                     Rng& rng);

}  // namespace mvbcf
