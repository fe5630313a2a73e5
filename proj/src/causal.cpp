#include "mvbcf/causal.hpp"

#include "mvbcf/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mvbcf {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct Conjugate {
  Matrix precision;  // prior precision + data precision
  Vector linear;     // prior precision * prior mean + data linear term
};

Conjugate mu_conjugate(const LeafStats& s, const NoiseState& noise, const LeafPriorState& prior) {
  const Matrix& sigma_inv = noise.precision.inverse;
  return {prior.precision + static_cast<double>(s.count) * sigma_inv,
          prior.precision_mean + sigma_inv * s.sum};
}

Conjugate tau_conjugate(const LeafStats& s, const NoiseState& noise, const LeafPriorState& prior) {
  if (!s.has_treatment) {
    throw Error(ErrorKind::Configuration, "tau leaf statistics need treatment indicators");
  }
  const Matrix& sigma_inv = noise.precision.inverse;
  // sum_i diag(Z_i) Sigma^{-1} diag(Z_i) = (Z^T Z) o Sigma^{-1}
  // sum_i Z_i o (Sigma^{-1} R_i), component a = sum_b Sigma^{-1}_{ab} (Z^T R)_{ab}
  return {prior.precision + s.ztz.cwiseProduct(sigma_inv),
          prior.precision_mean + sigma_inv.cwiseProduct(s.zr).rowwise().sum()};
}

double leaf_log_marginal(const LeafStats& s, const Conjugate& c, const NoiseState& noise,
                         const LeafPriorState& prior, std::size_t leaf) {
  const Eigen::LLT<Matrix> llt(c.precision);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::DecompositionFailure,
                "posterior precision of leaf " + std::to_string(leaf) + " is singular");
  }
  const Matrix lower = llt.matrixL();
  const double log_det_precision = 2.0 * lower.diagonal().array().log().sum();
  const double n = static_cast<double>(s.count);
  const double p = static_cast<double>(s.sum.size());
  const double data_quad = noise.precision.inverse.cwiseProduct(s.outer).sum();
  const double posterior_quad = c.linear.dot(llt.solve(c.linear));
  return -0.5 * n * p * kLog2Pi - 0.5 * n * noise.precision.log_det - 0.5 * data_quad -
         0.5 * prior.log_det_cov - 0.5 * log_det_precision - 0.5 * prior.mean_quad +
         0.5 * posterior_quad;
}

LeafPosterior posterior_from(const Conjugate& c) {
  const Eigen::LLT<Matrix> llt(c.precision);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::DecompositionFailure, "leaf posterior precision is singular");
  }
  const auto p = c.precision.rows();
  LeafPosterior out;
  out.cov = llt.solve(Matrix::Identity(p, p));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.mean = out.cov * c.linear;
  return out;
}

Vector draw_from(const LeafPosterior& post, Rng& rng) {
  const auto p = post.mean.size();
  Vector z(p);
  for (Eigen::Index k = 0; k < p; ++k) z(k) = rng.normal();
  return post.mean + cholesky_with_jitter(post.cov, "leaf posterior covariance") * z;
}

}  // namespace

LeafPriorState::LeafPriorState(const LeafPrior& prior) : mean(prior.mean) {
  if (prior.mean.size() != prior.cov.dim()) {
    throw Error(ErrorKind::Shape, "leaf prior mean and covariance dimensions differ");
  }
  const PrecisionCache cache = PrecisionCache::from(prior.cov, "leaf prior covariance");
  precision = cache.inverse;
  log_det_cov = cache.log_det;
  precision_mean = precision * mean;
  mean_quad = mean.dot(precision_mean);
}

double mu_log_marginal(std::span<const LeafStats> stats, const NoiseState& noise,
                       const LeafPriorState& prior) {
  double total = 0.0;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    total += leaf_log_marginal(stats[k], mu_conjugate(stats[k], noise, prior), noise, prior, k);
  }
  return total;
}

double tau_log_marginal(std::span<const LeafStats> stats, const NoiseState& noise,
                        const LeafPriorState& prior) {
  double total = 0.0;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    total += leaf_log_marginal(stats[k], tau_conjugate(stats[k], noise, prior), noise, prior, k);
  }
  return total;
}

double mu_log_marginal(std::span<const LeafStats> stats, const SymMatrix& sigma,
                       const LeafPrior& prior) {
  return mu_log_marginal(stats, NoiseState(sigma), LeafPriorState(prior));
}

double tau_log_marginal(std::span<const LeafStats> stats, const SymMatrix& sigma,
                        const LeafPrior& prior) {
  return tau_log_marginal(stats, NoiseState(sigma), LeafPriorState(prior));
}

LeafPosterior mu_leaf_posterior(const LeafStats& stats, const NoiseState& noise,
                                const LeafPriorState& prior) {
  return posterior_from(mu_conjugate(stats, noise, prior));
}

LeafPosterior tau_leaf_posterior(const LeafStats& stats, const NoiseState& noise,
                                 const LeafPriorState& prior) {
  return posterior_from(tau_conjugate(stats, noise, prior));
}

Vector sample_mu_leaf(const LeafStats& stats, const NoiseState& noise,
                      const LeafPriorState& prior, Rng& rng) {
  if (stats.count == 0) throw Error(ErrorKind::ViolatedInvariant, "empty mu leaf");
  return draw_from(mu_leaf_posterior(stats, noise, prior), rng);
}

Vector sample_tau_leaf(const LeafStats& stats, const NoiseState& noise,
                       const LeafPriorState& prior, Rng& rng) {
  if (stats.count == 0) throw Error(ErrorKind::ViolatedInvariant, "empty tau leaf");
  return draw_from(tau_leaf_posterior(stats, noise, prior), rng);
}

Vector sample_mu_leaf(const LeafStats& stats, const SymMatrix& sigma, const LeafPrior& prior,
                      Rng& rng) {
  return sample_mu_leaf(stats, NoiseState(sigma), LeafPriorState(prior), rng);
}

Vector sample_tau_leaf(const LeafStats& stats, const SymMatrix& sigma, const LeafPrior& prior,
                       Rng& rng) {
  return sample_tau_leaf(stats, NoiseState(sigma), LeafPriorState(prior), rng);
}

SymMatrix update_sigma_matrix(const Matrix& Y, const Matrix& Y_hat, const WishartPrior& prior,
                              Rng& rng) {
  if (Y.rows() != Y_hat.rows() || Y.cols() != Y_hat.cols()) {
    throw Error(ErrorKind::Shape, "observed and fitted outcomes differ in shape");
  }
  if (Y.rows() < 1) throw Error(ErrorKind::EmptyInput, "covariance update needs n >= 1");
  const Matrix resid = Y - Y_hat;
  Matrix scale = prior.scale.matrix() + resid.transpose() * resid;
  scale = 0.5 * (scale + scale.transpose());
  return sample_inv_wishart(prior.df + static_cast<double>(Y.rows()), SymMatrix(scale), rng);
}

void CausalConfig::validate(int p_data, int num_x) const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::Configuration, what); };
  if (p != 0 && p != p_data) fail("configured outcome dimension differs from the data");
  if (num_mu_trees < 1 || num_tau_trees < 1) fail("tree counts must be positive");
  if (iterations < 1 || burn_in < 0 || burn_in >= iterations) fail("need 0 <= burn_in < iterations");
  for (const TreePriorConfig* tp : {&mu_tree_prior, &tau_tree_prior}) {
    if (!(tp->alpha > 0.0 && tp->alpha < 1.0) || tp->beta < 0.0) fail("tree prior needs 0<alpha<1, beta>=0");
  }
  if (!(mu_variance() > 0.0) || !(tau_variance() > 0.0)) fail("leaf variances must be positive");
  if (mu_prior_mean && mu_prior_mean->size() != p_data) fail("mu prior mean has wrong length");
  if (tau_prior_mean && tau_prior_mean->size() != p_data) fail("tau prior mean has wrong length");
  if (wishart_df && !(*wishart_df > p_data - 1)) fail("Wishart degrees of freedom must exceed p - 1");
  if (wishart_scale && !(*wishart_scale > 0.0)) fail("Wishart scale must be positive");
  for (const auto* cols : {&mu_covariates, &tau_covariates}) {
    for (int c : *cols) {
      if (c < 0 || c >= num_x) fail("covariate subset index out of range");
    }
  }
}

void CausalDataset::validate() const {
  const auto n = X.rows();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "dataset has no rows");
  if (Y.rows() != n || Z.rows() != n || Y.cols() == 0 || Z.cols() != Y.cols()) {
    throw Error(ErrorKind::Shape, "X, Y and Z must have matching rows and Y, Z matching columns");
  }
  if (pi_hat.size() == 0) throw Error(ErrorKind::Configuration, "propensity estimates are missing");
  if (pi_hat.rows() != n) throw Error(ErrorKind::Shape, "propensity rows differ from X");
  if (weights.size() != 0 && weights.size() != n) throw Error(ErrorKind::Shape, "weight length differs from n");
  for (Eigen::Index i = 0; i < Z.size(); ++i) {
    const double z = Z.data()[i];
    if (z != 0.0 && z != 1.0) throw Error(ErrorKind::InvalidParameter, "treatment indicators must be 0 or 1");
  }
  if ((pi_hat.array() <= 0.0).any() || (pi_hat.array() >= 1.0).any()) {
    throw Error(ErrorKind::OverlapViolation, "propensity estimates must lie strictly inside (0, 1)");
  }
  if (weights.size() != 0 && (weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::Weight, "survey weights must be positive");
  }
}

Matrix CovariateLayout::mu_design(const Matrix& X, const Matrix& pi_hat) const {
  Matrix out(X.rows(), static_cast<Eigen::Index>(mu_columns.size()) + pi_hat.cols());
  for (std::size_t c = 0; c < mu_columns.size(); ++c) out.col(c) = X.col(mu_columns[c]);
  out.rightCols(pi_hat.cols()) = pi_hat;
  return out;
}

Matrix CovariateLayout::tau_design(const Matrix& X) const {
  Matrix out(X.rows(), static_cast<Eigen::Index>(tau_columns.size()));
  for (std::size_t c = 0; c < tau_columns.size(); ++c) out.col(c) = X.col(tau_columns[c]);
  return out;
}

Standardization standardize_columns(const Matrix& Y) {
  Standardization s{Vector(Y.cols()), Vector(Y.cols())};
  const double n = static_cast<double>(Y.rows());
  if (Y.rows() < 2) throw Error(ErrorKind::DegenerateOutcome, "need at least two rows to standardize");
  for (Eigen::Index k = 0; k < Y.cols(); ++k) {
    s.mean(k) = Y.col(k).mean();
    const double ss = (Y.col(k).array() - s.mean(k)).square().sum();
    s.sd(k) = std::sqrt(ss / (n - 1.0));
    if (!(s.sd(k) > 0.0)) {
      throw Error(ErrorKind::DegenerateOutcome, "outcome component " + std::to_string(k) + " is constant");
    }
  }
  return s;
}

namespace {

struct Forest {
  Matrix design;
  CutGrid grid;
  TreePriorConfig prior;
  std::vector<Tree> trees;
  std::vector<std::vector<int>> leaf_of_row;

  Forest(Matrix x, TreePriorConfig tp, int count, int p)
      : design(std::move(x)), grid(design), prior(tp), trees(count, Tree(p)),
        leaf_of_row(count, std::vector<int>(static_cast<std::size_t>(design.rows()), 0)) {}
};

// out(i, :) = leaf value of row i under tree t.
void tree_contribution(const Tree& tree, const std::vector<int>& leaf_of_row, Matrix& out) {
  const std::vector<int> ids = tree.leaves();
  const auto p = out.cols();
  for (std::size_t i = 0; i < leaf_of_row.size(); ++i) {
    const Vector& leaf = tree.node(ids[leaf_of_row[i]]).leaf;
    for (Eigen::Index k = 0; k < p; ++k) out(static_cast<Eigen::Index>(i), k) = leaf(k);
  }
}

// Totals are rebuilt from scratch in tree order so they match an independent
// replay of the stored trees bit for bit.
Matrix forest_total(const Forest& forest, Eigen::Index n, Eigen::Index p) {
  Matrix total = Matrix::Zero(n, p);
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    const std::vector<int> ids = forest.trees[t].leaves();
    const auto& lor = forest.leaf_of_row[t];
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector& leaf = forest.trees[t].node(ids[lor[i]]).leaf;
      for (Eigen::Index k = 0; k < p; ++k) total(i, k) += leaf(k);
    }
  }
  return total;
}

template <class LeafSampler>
void resample_leaves(Tree& tree, const std::vector<LeafStats>& stats, LeafSampler&& sample) {
  std::vector<Vector> values;
  values.reserve(stats.size());
  for (const LeafStats& s : stats) values.push_back(sample(s));
  tree.set_leaf_values(values);
}

std::vector<int> all_columns(int d) {
  std::vector<int> out(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) out[c] = c;
  return out;
}

}  // namespace

CausalDraws fit_causal(const CausalDataset& data, const CausalConfig& config, Rng& rng,
                       int chain_id) {
  data.validate();
  const Eigen::Index n = data.n();
  const int p = static_cast<int>(data.p());
  const int d = static_cast<int>(data.X.cols());
  config.validate(p, d);

  CausalDraws out;
  out.n = static_cast<int>(n);
  out.p = p;
  out.layout.num_x = d;
  out.layout.num_pi = static_cast<int>(data.pi_hat.cols());
  out.layout.mu_columns = config.mu_covariates.empty() ? all_columns(d) : config.mu_covariates;
  out.layout.tau_columns = config.tau_covariates.empty() ? all_columns(d) : config.tau_covariates;

  const Standardization scale = standardize_columns(data.Y);
  out.chains.push_back({chain_id, scale});
  Matrix Ys(n, p);
  for (int k = 0; k < p; ++k) {
    Ys.col(k) = (data.Y.col(k).array() - scale.mean(k)) / scale.sd(k);
  }
  const Matrix& Z = data.Z;

  const LeafPriorState mu_prior(LeafPrior{config.mu_prior_mean.value_or(Vector::Zero(p)),
                                          SymMatrix::identity(p, config.mu_variance())});
  const LeafPriorState tau_prior(LeafPrior{config.tau_prior_mean.value_or(Vector::Zero(p)),
                                           SymMatrix::identity(p, config.tau_variance())});
  double constant_fit_variance = 0.0;
  for (int k = 0; k < p; ++k) {
    constant_fit_variance += (Ys.col(k).array() - Ys.col(k).mean()).square().mean();
  }
  constant_fit_variance /= p;
  const WishartPrior wishart{config.wishart_df.value_or(p + 2.0),
                             SymMatrix::identity(p, config.wishart_scale.value_or(constant_fit_variance))};

  Forest mu(out.layout.mu_design(data.X, data.pi_hat), config.mu_tree_prior, config.num_mu_trees, p);
  Forest tau(out.layout.tau_design(data.X), config.tau_tree_prior, config.num_tau_trees, p);

  NoiseState noise(SymMatrix::identity(p));
  Matrix mu_fit = Matrix::Zero(n, p);
  Matrix tau_fit = Matrix::Zero(n, p);
  Matrix resid = Ys;  // Ys - mu_fit - tau_fit o Z
  Matrix partial(n, p);
  Matrix contrib(n, p);

  out.draws.reserve(static_cast<std::size_t>(config.iterations - config.burn_in));
  for (int iter = 1; iter <= config.iterations; ++iter) {
    for (std::size_t t = 0; t < mu.trees.size(); ++t) {
      Tree& tree = mu.trees[t];
      auto& lor = mu.leaf_of_row[t];
      tree_contribution(tree, lor, contrib);
      partial = resid + contrib;
      auto marginal = [&](const Tree& tr, const std::vector<int>& rows) {
        const auto stats = leaf_suffstats(rows, tr.num_leaves(), partial);
        return mu_log_marginal(stats, noise, mu_prior);
      };
      mh_structure_step(tree, lor, mu.design, mu.grid, mu.prior, rng, marginal, config.moves);
      const auto stats = leaf_suffstats(lor, tree.num_leaves(), partial);
      resample_leaves(tree, stats, [&](const LeafStats& s) { return sample_mu_leaf(s, noise, mu_prior, rng); });
      tree_contribution(tree, lor, contrib);
      resid = partial - contrib;
    }
    mu_fit = forest_total(mu, n, p);
    resid = Ys - mu_fit - tau_fit.cwiseProduct(Z);

    for (std::size_t t = 0; t < tau.trees.size(); ++t) {
      Tree& tree = tau.trees[t];
      auto& lor = tau.leaf_of_row[t];
      tree_contribution(tree, lor, contrib);
      partial = resid + contrib.cwiseProduct(Z);
      auto marginal = [&](const Tree& tr, const std::vector<int>& rows) {
        const auto stats = leaf_suffstats(rows, tr.num_leaves(), partial, &Z);
        return tau_log_marginal(stats, noise, tau_prior);
      };
      mh_structure_step(tree, lor, tau.design, tau.grid, tau.prior, rng, marginal, config.moves);
      const auto stats = leaf_suffstats(lor, tree.num_leaves(), partial, &Z);
      resample_leaves(tree, stats, [&](const LeafStats& s) { return sample_tau_leaf(s, noise, tau_prior, rng); });
      tree_contribution(tree, lor, contrib);
      resid = partial - contrib.cwiseProduct(Z);
    }
    tau_fit = forest_total(tau, n, p);
    const Matrix fitted = mu_fit + tau_fit.cwiseProduct(Z);
    noise = NoiseState(update_sigma_matrix(Ys, fitted, wishart, rng));
    resid = Ys - fitted;

    if (iter <= config.burn_in) continue;
    CausalDraw draw;
    draw.chain = chain_id;
    draw.iteration = iter;
    draw.mu_hat.resize(n, p);
    draw.tau_hat.resize(n, p);
    draw.y_hat.resize(n, p);
    for (int k = 0; k < p; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        draw.mu_hat(i, k) = scale.mean(k) + scale.sd(k) * mu_fit(i, k);
        draw.tau_hat(i, k) = scale.sd(k) * tau_fit(i, k);
        draw.y_hat(i, k) = draw.mu_hat(i, k) + draw.tau_hat(i, k) * Z(i, k);
      }
    }
    draw.sigma.resize(p, p);
    for (int a = 0; a < p; ++a) {
      for (int b = 0; b < p; ++b) draw.sigma(a, b) = (scale.sd(a) * scale.sd(b)) * noise.sigma(a, b);
    }
    draw.mu_trees = mu.trees;
    draw.tau_trees = tau.trees;
    out.draws.push_back(std::move(draw));
  }
  return out;
}

namespace {

const Standardization& scale_of(const CausalDraws& draws, const CausalDraw& draw) {
  for (const ChainInfo& c : draws.chains) {
    if (c.id == draw.chain) return c.scale;
  }
  throw Error(ErrorKind::ViolatedInvariant, "draw refers to an unknown chain");
}

std::vector<Matrix> replay(const CausalDraws& draws, const Matrix& design, bool mu_trees) {
  std::vector<kernels::EnsembleRef> refs;
  refs.reserve(draws.draws.size());
  for (const CausalDraw& d : draws.draws) refs.push_back(mu_trees ? &d.mu_trees : &d.tau_trees);
  return kernels::predict_ensembles(refs, design, draws.p);
}

}  // namespace

std::vector<Matrix> predict_tau(const CausalDraws& draws, const Matrix& X_new) {
  if (X_new.cols() != draws.layout.num_x) {
    throw Error(ErrorKind::Column, "new covariates have " + std::to_string(X_new.cols()) +
                                       " columns, training had " + std::to_string(draws.layout.num_x));
  }
  std::vector<Matrix> tau = replay(draws, draws.layout.tau_design(X_new), false);
  for (std::size_t d = 0; d < tau.size(); ++d) {
    const Standardization& s = scale_of(draws, draws.draws[d]);
    for (int k = 0; k < draws.p; ++k) {
      for (Eigen::Index i = 0; i < tau[d].rows(); ++i) tau[d](i, k) = s.sd(k) * tau[d](i, k);
    }
  }
  return tau;
}

CausalPrediction predict_causal(const CausalDraws& draws, const Matrix& X_new, const Matrix& Z_new,
                                const Matrix& pi_new) {
  if (X_new.cols() != draws.layout.num_x) {
    throw Error(ErrorKind::Column, "new covariates have " + std::to_string(X_new.cols()) +
                                       " columns, training had " + std::to_string(draws.layout.num_x));
  }
  if (pi_new.cols() != draws.layout.num_pi || pi_new.rows() != X_new.rows()) {
    throw Error(ErrorKind::Column, "propensity columns do not match the training schema");
  }
  if (Z_new.rows() != X_new.rows() || Z_new.cols() != draws.p) {
    throw Error(ErrorKind::Shape, "treatment matrix must be n_new x p");
  }
  CausalPrediction out;
  out.mu = replay(draws, draws.layout.mu_design(X_new, pi_new), true);
  out.tau = predict_tau(draws, X_new);
  out.y.resize(out.mu.size());
  for (std::size_t d = 0; d < out.mu.size(); ++d) {
    const Standardization& s = scale_of(draws, draws.draws[d]);
    Matrix& mu = out.mu[d];
    Matrix& y = out.y[d];
    y.resize(mu.rows(), mu.cols());
    for (int k = 0; k < draws.p; ++k) {
      for (Eigen::Index i = 0; i < mu.rows(); ++i) {
        mu(i, k) = s.mean(k) + s.sd(k) * mu(i, k);
        y(i, k) = mu(i, k) + out.tau[d](i, k) * Z_new(i, k);
      }
    }
  }
  return out;
}

Matrix ate_draws(const CausalDraws& draws) {
  Matrix out(static_cast<Eigen::Index>(draws.draws.size()), draws.p);
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    out.row(static_cast<Eigen::Index>(d)) = draws.draws[d].tau_hat.colwise().mean();
  }
  return out;
}

}  // namespace mvbcf
