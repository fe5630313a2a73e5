#pragma once

#include "mvbcf/common.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace mvbcf {

/// Dense symmetric matrix. Construction validates symmetry to 1e-12 relative
/// and stores the exactly symmetrized average of the input and its transpose.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& m);

  static SymMatrix identity(int dim, double scale = 1.0);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Cached inverse and log-determinant of a positive-definite matrix.
struct PrecisionCache {
  Matrix inverse;
  double log_det = 0.0;

  static PrecisionCache from(const SymMatrix& cov, std::string_view name);
};

/// Lower Cholesky factor. Retries once with diagonal jitter 1e-10 * trace / dim.
Matrix cholesky_with_jitter(const Matrix& cov, std::string_view name);

Vector sample_mvn(const Vector& mean, const SymMatrix& cov, Rng& rng,
                  std::string_view name = "covariance");

SymMatrix sample_inv_wishart(double df, const SymMatrix& scale, Rng& rng);

/// Gamma(shape, rate); mean shape / rate.
double sample_gamma(double shape, double rate, Rng& rng);

/// Unit-variance normal centred at `mean`, truncated to (0, inf) when
/// `positive`, otherwise to (-inf, 0).
double sample_truncated_normal(double mean, bool positive, Rng& rng);

double normal_cdf(double x);
double normal_quantile(double prob);
double chi_squared_quantile(double prob, double df);

/// Empirical CRPS: mean |X_i - y| - 1/2 mean over all ordered pairs |X_i - X_j|.
double crps_empirical(std::span<const double> draws, double observed);

/// Linear-interpolation sample quantile (R type 7). `sorted` must be ascending.
double quantile_sorted(std::span<const double> sorted, double prob);

}  // namespace mvbcf
