#include "mvbcf/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mvbcf {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DecompositionFailure: return "decomposition failure";
    case ErrorKind::InvalidDegreesOfFreedom: return "invalid degrees of freedom";
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::ViolatedInvariant: return "violated invariant";
    case ErrorKind::Standardization: return "standardization";
    case ErrorKind::OverlapViolation: return "overlap violation";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::DegenerateOutcome: return "degenerate outcome";
    case ErrorKind::Column: return "column";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::InsufficientSample: return "insufficient sample";
    case ErrorKind::Weight: return "weight";
    case ErrorKind::Pooling: return "pooling";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

SymMatrix::SymMatrix(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorKind::Shape, "symmetric matrix must be square and nonempty");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorKind::ViolatedInvariant, "matrix is not symmetric");
  }
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(int dim, double scale) {
  return SymMatrix(Matrix::Identity(dim, dim) * scale);
}

Matrix cholesky_with_jitter(const Matrix& cov, std::string_view name) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double jitter = 1e-10 * cov.trace() / static_cast<double>(cov.rows());
  Matrix adjusted = cov;
  adjusted.diagonal().array() += jitter;
  llt.compute(adjusted);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::DecompositionFailure,
                "Cholesky decomposition failed for " + std::string(name));
  }
  return llt.matrixL();
}

PrecisionCache PrecisionCache::from(const SymMatrix& cov, std::string_view name) {
  Eigen::LLT<Matrix> llt(cov.matrix());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::DecompositionFailure,
                "matrix is not positive definite: " + std::string(name));
  }
  PrecisionCache out;
  const Matrix lower = llt.matrixL();
  out.log_det = 2.0 * lower.diagonal().array().log().sum();
  out.inverse = llt.solve(Matrix::Identity(cov.dim(), cov.dim()));
  out.inverse = 0.5 * (out.inverse + out.inverse.transpose());
  return out;
}

Vector sample_mvn(const Vector& mean, const SymMatrix& cov, Rng& rng, std::string_view name) {
  const auto dim = mean.size();
  if (dim != cov.dim()) {
    throw Error(ErrorKind::Shape, "mean and covariance dimensions differ");
  }
  Vector z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z(i) = rng.normal();
  // A zero covariance is a point mass; the normals are still consumed so the
  // random stream does not depend on the covariance values.
  if (cov.matrix().cwiseAbs().maxCoeff() == 0.0) return mean;
  const Matrix lower = cholesky_with_jitter(cov.matrix(), name);
  return mean + lower * z;
}

SymMatrix sample_inv_wishart(double df, const SymMatrix& scale, Rng& rng) {
  const int p = scale.dim();
  if (!(df > p - 1)) {
    throw Error(ErrorKind::InvalidDegreesOfFreedom,
                "inverse-Wishart degrees of freedom must exceed dim - 1");
  }
  // Sigma ~ IW(df, S)  <=>  Sigma^{-1} ~ W(df, S^{-1}); Bartlett on the Wishart.
  const PrecisionCache scale_inv = PrecisionCache::from(scale, "inverse-Wishart scale");
  const Matrix lower = cholesky_with_jitter(scale_inv.inverse, "inverse-Wishart scale inverse");
  Matrix bartlett = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    bartlett(i, i) = std::sqrt(sample_gamma(0.5 * (df - i), 0.5, rng));
    for (int j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  const Matrix factor = lower * bartlett;
  // W = factor * factor^T, so W^{-1} = factor^{-T} factor^{-1}.
  const Matrix factor_inv =
      factor.triangularView<Eigen::Lower>().solve(Matrix::Identity(p, p));
  const Matrix sigma = factor_inv.transpose() * factor_inv;
  return SymMatrix(0.5 * (sigma + sigma.transpose()));
}

double sample_gamma(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
    throw Error(ErrorKind::InvalidParameter, "gamma shape and rate must be positive");
  }
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  double draw = dist(rng.engine());
  // Keep the draw inside the support when the shape is tiny.
  return std::max(draw, std::numeric_limits<double>::min());
}

namespace {

// Standard normal truncated to (lower, inf).
double lower_truncated_standard_normal(double lower, Rng& rng) {
  if (lower <= 0.0) {
    while (true) {
      const double z = rng.normal();
      if (z > lower) return z;
    }
  }
  // Exponential rejection sampler with the optimal rate for this bound.
  const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
  while (true) {
    const double z = lower - std::log(1.0 - rng.uniform()) / rate;
    const double accept = std::exp(-0.5 * (z - rate) * (z - rate));
    if (rng.uniform() <= accept) return z;
  }
}

}  // namespace

double sample_truncated_normal(double mean, bool positive, Rng& rng) {
  if (positive) return mean + lower_truncated_standard_normal(-mean, rng);
  return mean - lower_truncated_standard_normal(mean, rng);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double prob) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), prob);
}

double chi_squared_quantile(double prob, double df) {
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), prob);
}

double crps_empirical(std::span<const double> draws, double observed) {
  if (draws.empty()) throw Error(ErrorKind::EmptyInput, "CRPS needs at least one draw");
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  double abs_error = 0.0;
  double pair_sum = 0.0;  // sum over i < j of |x_i - x_j|
  for (std::size_t k = 0; k < m; ++k) {
    abs_error += std::abs(sorted[k] - observed);
    pair_sum += (2.0 * static_cast<double>(k) - static_cast<double>(m) + 1.0) * sorted[k];
  }
  const double md = static_cast<double>(m);
  // Ordered pairs: each unordered pair counts twice, diagonal contributes zero.
  return std::max(0.0, abs_error / md - pair_sum / (md * md));
}

double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw Error(ErrorKind::EmptyInput, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace mvbcf
