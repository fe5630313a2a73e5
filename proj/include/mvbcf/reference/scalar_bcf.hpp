#pragma once

// Univariate BCF written directly with scalar conjugate formulas and a Gamma
// precision update. Serial and deliberately independent of the matrix
// sampler; used to cross-check it at p = 1.

#include "mvbcf/causal.hpp"

namespace mvbcf::reference {

struct ScalarBcfDraws {
  Matrix tau_hat;  // kept draws x n, original scale
  Vector ate;      // per kept draw
  Vector sigma;    // per kept draw, original scale
};

/// Uses the tree counts, tree priors, leaf variances, noise prior and
/// iteration counts of `config` (p must be 1 or 0).
ScalarBcfDraws fit_scalar_bcf(const Vector& y, const Matrix& X, const Vector& z, const Vector& pi_hat,
                              const CausalConfig& config, Rng& rng);

/// log int prod_i N(r_i | w_i theta, sigma2) N(theta | 0, leaf_var) dtheta for
/// weights w_i in {1} (mu leaves) or {0, 1} (tau leaves).
double scalar_leaf_log_marginal(int count, double weight_sq, double weighted_sum, double sum_sq,
                                double sigma2, double leaf_var);

}  // namespace mvbcf::reference
