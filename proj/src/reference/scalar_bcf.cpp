#include "mvbcf/reference/scalar_bcf.hpp"

#include <cmath>
#include <numbers>

namespace mvbcf::reference {

double scalar_leaf_log_marginal(int count, double weight_sq, double weighted_sum, double sum_sq,
                                double sigma2, double leaf_var) {
  const double denom = sigma2 + weight_sq * leaf_var;
  return -0.5 * count * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * std::log(denom / sigma2) -
         0.5 * sum_sq / sigma2 + 0.5 * leaf_var * weighted_sum * weighted_sum / (sigma2 * denom);
}

namespace {

struct ScalarLeaf {
  int count = 0;
  double weight_sq = 0.0;
  double weighted_sum = 0.0;
  double sum_sq = 0.0;
};

std::vector<ScalarLeaf> scalar_stats(const std::vector<int>& rows, int num_leaves, const Vector& r,
                                     const Vector* w) {
  std::vector<ScalarLeaf> out(static_cast<std::size_t>(num_leaves));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ScalarLeaf& s = out[rows[i]];
    const double wi = w ? (*w)(i) : 1.0;
    ++s.count;
    s.weight_sq += wi * wi;
    s.weighted_sum += wi * r(i);
    s.sum_sq += r(i) * r(i);
  }
  return out;
}

struct ScalarForest {
  Matrix design;
  CutGrid grid;
  TreePriorConfig prior;
  double leaf_var;
  std::vector<Tree> trees;
  std::vector<std::vector<int>> rows;

  ScalarForest(Matrix x, TreePriorConfig tp, double var, int count)
      : design(std::move(x)), grid(design), prior(tp), leaf_var(var), trees(count, Tree(1)),
        rows(count, std::vector<int>(static_cast<std::size_t>(design.rows()), 0)) {}

  double value(std::size_t t, std::size_t i) const {
    return trees[t].node(trees[t].leaves()[rows[t][i]]).leaf(0);
  }

  // Backfits every tree; `resid` is the full residual and `w` the per-row
  // multiplier of this forest's output.
  void sweep(Vector& resid, const Vector* w, double sigma2, const MoveWeights& moves, Rng& rng) {
    const auto n = resid.size();
    Vector partial(n);
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const std::vector<int> ids = trees[t].leaves();
      for (Eigen::Index i = 0; i < n; ++i) {
        partial(i) = resid(i) + (w ? (*w)(i) : 1.0) * trees[t].node(ids[rows[t][i]]).leaf(0);
      }
      auto marginal = [&](const Tree& tr, const std::vector<int>& lor) {
        double total = 0.0;
        for (const ScalarLeaf& s : scalar_stats(lor, tr.num_leaves(), partial, w)) {
          total += scalar_leaf_log_marginal(s.count, s.weight_sq, s.weighted_sum, s.sum_sq, sigma2, leaf_var);
        }
        return total;
      };
      mh_structure_step(trees[t], rows[t], design, grid, prior, rng, marginal, moves);
      std::vector<Vector> values;
      for (const ScalarLeaf& s : scalar_stats(rows[t], trees[t].num_leaves(), partial, w)) {
        const double post_var = 1.0 / (1.0 / leaf_var + s.weight_sq / sigma2);
        values.push_back(Vector::Constant(1, post_var * s.weighted_sum / sigma2 + std::sqrt(post_var) * rng.normal()));
      }
      trees[t].set_leaf_values(values);
      const std::vector<int> new_ids = trees[t].leaves();
      for (Eigen::Index i = 0; i < n; ++i) {
        resid(i) = partial(i) - (w ? (*w)(i) : 1.0) * trees[t].node(new_ids[rows[t][i]]).leaf(0);
      }
    }
  }

  Vector total() const {
    Vector out = Vector::Zero(design.rows());
    for (std::size_t t = 0; t < trees.size(); ++t) {
      for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += value(t, static_cast<std::size_t>(i));
    }
    return out;
  }
};

Matrix select(const Matrix& X, const std::vector<int>& cols) {
  if (cols.empty()) return X;
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(c) = X.col(cols[c]);
  return out;
}

}  // namespace

ScalarBcfDraws fit_scalar_bcf(const Vector& y, const Matrix& X, const Vector& z, const Vector& pi_hat,
                              const CausalConfig& config, Rng& rng) {
  config.validate(1, static_cast<int>(X.cols()));
  const auto n = y.size();
  if (X.rows() != n || z.size() != n || pi_hat.size() != n) {
    throw Error(ErrorKind::Shape, "inputs must have one row per unit");
  }
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw Error(ErrorKind::DegenerateOutcome, "outcome is constant");
  const Vector ys = (y.array() - mean) / sd;

  Matrix mu_x(n, 0);
  {
    const Matrix base = select(X, config.mu_covariates);
    mu_x.resize(n, base.cols() + 1);
    mu_x.leftCols(base.cols()) = base;
    mu_x.col(base.cols()) = pi_hat;
  }
  ScalarForest mu(mu_x, config.mu_tree_prior, config.mu_variance(), config.num_mu_trees);
  ScalarForest tau(select(X, config.tau_covariates), config.tau_tree_prior, config.tau_variance(),
                   config.num_tau_trees);

  const double nu = config.wishart_df.value_or(3.0);
  const double scale = config.wishart_scale.value_or((ys.array() - ys.mean()).square().mean());

  const int kept = config.iterations - config.burn_in;
  ScalarBcfDraws out{Matrix(kept, n), Vector(kept), Vector(kept)};
  double sigma2 = 1.0;
  Vector resid = ys;
  for (int iter = 1; iter <= config.iterations; ++iter) {
    mu.sweep(resid, nullptr, sigma2, config.moves, rng);
    tau.sweep(resid, &z, sigma2, config.moves, rng);
    const Vector tau_fit = tau.total();
    resid = ys - mu.total() - tau_fit.cwiseProduct(z);
    const double precision = sample_gamma(0.5 * (nu + static_cast<double>(n)),
                                          0.5 * (scale + resid.squaredNorm()), rng);
    sigma2 = 1.0 / precision;
    if (iter <= config.burn_in) continue;
    const int k = iter - config.burn_in - 1;
    out.tau_hat.row(k) = sd * tau_fit.transpose();
    out.ate(k) = out.tau_hat.row(k).mean();
    out.sigma(k) = sd * std::sqrt(sigma2);
  }
  return out;
}

}  // namespace mvbcf::reference
