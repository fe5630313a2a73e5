#include "mvbcf/bart.hpp"

#include "mvbcf/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mvbcf {

void BartConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::Configuration, what); };
  if (num_trees < 1) fail("num_trees must be positive");
  if (iterations < 1 || burn_in < 0 || burn_in >= iterations) fail("need 0 <= burn_in < iterations");
  if (!(tree_prior.alpha > 0.0 && tree_prior.alpha < 1.0) || tree_prior.beta < 0.0) {
    fail("tree prior needs 0<alpha<1, beta>=0");
  }
  if (!(leaf_variance() > 0.0)) fail("leaf sd must be positive");
  if (!(nu > 0.0)) fail("nu must be positive");
  if (lambda && !(*lambda > 0.0)) fail("lambda must be positive");
}

double calibrate_lambda(double sd_y, double nu, double prob) {
  if (!(sd_y > 0.0) || !(nu > 0.0)) throw Error(ErrorKind::InvalidParameter, "calibration needs sd_y > 0, nu > 0");
  return sd_y * sd_y * chi_squared_quantile(1.0 - prob, nu) / nu;
}

double update_sigma_univariate(const Vector& residuals, const NoisePrior& prior, Rng& rng) {
  if (residuals.size() == 0) throw Error(ErrorKind::EmptyInput, "variance update needs residuals");
  const double shape = 0.5 * (prior.nu + static_cast<double>(residuals.size()));
  const double rate = 0.5 * (prior.nu * prior.lambda + residuals.squaredNorm());
  return 1.0 / sample_gamma(shape, rate, rng);
}

double bart_leaf_log_marginal(int count, double sum, double sum_sq, double sigma2, double leaf_var) {
  const double n = count;
  const double denom = sigma2 + n * leaf_var;
  return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * std::log(denom / sigma2) -
         0.5 * sum_sq / sigma2 + 0.5 * leaf_var * sum * sum / (sigma2 * denom);
}

namespace {

// Shared sum-of-trees state; one instance per chain.
class Backfitter {
 public:
  Backfitter(const Matrix& X, const BartConfig& config)
      : X_(X), grid_(X), config_(config), trees_(config.num_trees, Tree(1)),
        leaf_of_row_(config.num_trees, std::vector<int>(static_cast<std::size_t>(X.rows()), 0)),
        fit_(Matrix::Zero(X.rows(), 1)), resid_(X.rows(), 1), partial_(X.rows(), 1),
        contrib_(X.rows(), 1) {}

  // One pass over all trees against `target` with noise variance sigma2.
  void sweep(const Vector& target, double sigma2, Rng& rng) {
    const double leaf_var = config_.leaf_variance();
    resid_ = target - fit_;
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      Tree& tree = trees_[t];
      auto& rows = leaf_of_row_[t];
      contribution(tree, rows);
      partial_ = resid_ + contrib_;
      auto marginal = [&](const Tree& tr, const std::vector<int>& lor) {
        double total = 0.0;
        for (const LeafStats& s : leaf_suffstats(lor, tr.num_leaves(), partial_)) {
          total += bart_leaf_log_marginal(s.count, s.sum(0), s.outer(0, 0), sigma2, leaf_var);
        }
        return total;
      };
      mh_structure_step(tree, rows, X_, grid_, config_.tree_prior, rng, marginal, config_.moves);
      std::vector<Vector> values;
      for (const LeafStats& s : leaf_suffstats(rows, tree.num_leaves(), partial_)) {
        const double post_var = 1.0 / (1.0 / leaf_var + s.count / sigma2);
        values.push_back(Vector::Constant(1, post_var * s.sum(0) / sigma2 + std::sqrt(post_var) * rng.normal()));
      }
      tree.set_leaf_values(values);
      contribution(tree, rows);
      resid_ = partial_ - contrib_;
    }
    // Rebuilt in tree order so stored fits equal a replay of the stored trees.
    fit_.setZero();
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      contribution(trees_[t], leaf_of_row_[t]);
      fit_ += contrib_;
    }
  }

  Vector fit() const { return fit_.col(0); }
  const std::vector<Tree>& trees() const { return trees_; }

 private:
  void contribution(const Tree& tree, const std::vector<int>& rows) {
    const std::vector<int> ids = tree.leaves();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      contrib_(static_cast<Eigen::Index>(i), 0) = tree.node(ids[rows[i]]).leaf(0);
    }
  }

  const Matrix& X_;
  CutGrid grid_;
  const BartConfig& config_;
  std::vector<Tree> trees_;
  std::vector<std::vector<int>> leaf_of_row_;
  Matrix fit_;
  Matrix resid_;
  Matrix partial_;
  Matrix contrib_;
};

void check_inputs(const Vector& y, const Matrix& X, const BartConfig& config) {
  config.validate();
  if (X.rows() != y.size()) throw Error(ErrorKind::Shape, "X rows differ from outcome length");
  if (X.cols() == 0) throw Error(ErrorKind::Configuration, "no covariates");
  if (y.size() < 2 * kMinLeafSize) {
    throw Error(ErrorKind::InsufficientSample,
                "need at least " + std::to_string(2 * kMinLeafSize) + " rows, got " + std::to_string(y.size()));
  }
}

}  // namespace

BartDraws fit_bart(const Vector& y, const Matrix& X, const BartConfig& config, Rng& rng) {
  check_inputs(y, X, config);
  const double n = static_cast<double>(y.size());
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / (n - 1.0));
  const bool all_zero = (y.array() == 0.0).all();
  if (!all_zero && (std::abs(mean) > 0.1 || std::abs(sd - 1.0) > 0.2)) {
    throw Error(ErrorKind::Standardization, "outcome is not standardised (mean " + std::to_string(mean) +
                                                ", sd " + std::to_string(sd) + ")");
  }

  BartDraws out;
  out.n = static_cast<int>(y.size());
  out.noise_prior = {config.nu, config.lambda.value_or(calibrate_lambda(1.0, config.nu))};
  out.draws.reserve(static_cast<std::size_t>(config.iterations - config.burn_in));

  Backfitter state(X, config);
  double sigma2 = 1.0;
  for (int iter = 1; iter <= config.iterations; ++iter) {
    state.sweep(y, sigma2, rng);
    const Vector fit = state.fit();
    sigma2 = update_sigma_univariate(y - fit, out.noise_prior, rng);
    if (iter <= config.burn_in) continue;
    out.draws.push_back({iter, std::sqrt(sigma2), fit, state.trees()});
  }
  return out;
}

Matrix predict_bart(const BartDraws& draws, const Matrix& X_new) {
  std::vector<kernels::EnsembleRef> refs;
  refs.reserve(draws.draws.size());
  for (const BartDraw& d : draws.draws) refs.push_back(&d.trees);
  const std::vector<Matrix> pred = kernels::predict_ensembles(refs, X_new, 1);
  Matrix out(static_cast<Eigen::Index>(pred.size()), X_new.rows());
  for (std::size_t d = 0; d < pred.size(); ++d) {
    out.row(static_cast<Eigen::Index>(d)) = (pred[d].col(0).array() + draws.offset).transpose();
  }
  return out;
}

PropensityModel fit_propensity_model(const Vector& z, const Matrix& X, const BartConfig& config,
                                     Rng& rng) {
  check_inputs(z, X, config);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z(i) != 0.0 && z(i) != 1.0) throw Error(ErrorKind::InvalidParameter, "treatment must be 0 or 1");
  }
  const double rate = z.mean();
  if (rate == 0.0 || rate == 1.0) {
    throw Error(ErrorKind::OverlapViolation, "treatment column has a single class");
  }

  PropensityModel model;
  BartDraws& out = model.draws;
  out.n = static_cast<int>(z.size());
  out.offset = normal_quantile(rate);
  out.noise_prior = {config.nu, 1.0};
  out.draws.reserve(static_cast<std::size_t>(config.iterations - config.burn_in));

  Backfitter state(X, config);
  Vector latent(z.size());
  Vector prob_sum = Vector::Zero(z.size());
  for (int iter = 1; iter <= config.iterations; ++iter) {
    const Vector fit = state.fit();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      latent(i) = sample_truncated_normal(out.offset + fit(i), z(i) == 1.0, rng) - out.offset;
    }
    state.sweep(latent, 1.0, rng);
    if (iter <= config.burn_in) continue;
    const Vector f = state.fit();
    for (Eigen::Index i = 0; i < z.size(); ++i) prob_sum(i) += normal_cdf(out.offset + f(i));
    out.draws.push_back({iter, 1.0, f.array() + out.offset, state.trees()});
  }
  model.pi_hat = (prob_sum / static_cast<double>(out.draws.size()))
                     .cwiseMax(kPropensityFloor)
                     .cwiseMin(kPropensityCeiling);
  return model;
}

Vector fit_propensity(const Vector& z, const Matrix& X, const BartConfig& config, Rng& rng) {
  return fit_propensity_model(z, X, config, rng).pi_hat;
}

Vector predict_propensity(const PropensityModel& model, const Matrix& X_new) {
  const Matrix latent = predict_bart(model.draws, X_new);
  Vector out(X_new.rows());
  for (Eigen::Index i = 0; i < X_new.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index d = 0; d < latent.rows(); ++d) sum += normal_cdf(latent(d, i));
    out(i) = std::clamp(sum / static_cast<double>(latent.rows()), kPropensityFloor, kPropensityCeiling);
  }
  return out;
}

namespace {

Matrix with_treatment(const Matrix& X, const Vector& z) {
  Matrix out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  out.col(X.cols()) = z;
  return out;
}

}  // namespace

SLearner fit_s_learner(const Vector& y, const Matrix& X, const Vector& z, const BartConfig& config,
                       Rng& rng) {
  if (z.size() != X.rows()) throw Error(ErrorKind::Shape, "treatment length differs from X rows");
  if (y.size() < 2) throw Error(ErrorKind::InsufficientSample, "need at least two rows");
  SLearner fit;
  fit.num_x = static_cast<int>(X.cols());
  fit.mean = y.mean();
  fit.sd = std::sqrt((y.array() - fit.mean).square().sum() / static_cast<double>(y.size() - 1));
  if (!(fit.sd > 0.0)) throw Error(ErrorKind::DegenerateOutcome, "outcome is constant");
  const Vector ys = (y.array() - fit.mean) / fit.sd;
  fit.draws = fit_bart(ys, with_treatment(X, z), config, rng);
  return fit;
}

Matrix s_learner_predict(const SLearner& fit, const Matrix& X_new, const Vector& z) {
  if (X_new.cols() != fit.num_x) throw Error(ErrorKind::Column, "covariate count differs from training");
  if (z.size() != X_new.rows()) throw Error(ErrorKind::Shape, "treatment length differs from X rows");
  return (fit.sd * predict_bart(fit.draws, with_treatment(X_new, z)).array() + fit.mean).matrix();
}

Matrix s_learner_tau(const SLearner& fit, const Matrix& X_new) {
  if (X_new.cols() != fit.num_x) throw Error(ErrorKind::Column, "covariate count differs from training");
  const Matrix treated = predict_bart(fit.draws, with_treatment(X_new, Vector::Ones(X_new.rows())));
  const Matrix control = predict_bart(fit.draws, with_treatment(X_new, Vector::Zero(X_new.rows())));
  return fit.sd * (treated - control);
}

Matrix s_learner_tau(const Vector& y, const Matrix& X, const Vector& z, const BartConfig& config,
                     Rng& rng) {
  return s_learner_tau(fit_s_learner(y, X, z, config, rng), X);
}

}  // namespace mvbcf
