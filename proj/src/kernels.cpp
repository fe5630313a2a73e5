#include "mvbcf/kernels.hpp"

#include "mvbcf/stats.hpp"

#include <algorithm>

namespace mvbcf::kernels {

namespace {

Matrix predict_one(const std::vector<Tree>& trees, const Matrix& X, int p) {
  Matrix out = Matrix::Zero(X.rows(), p);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (const Tree& tree : trees) {
      const Vector& leaf = tree.predict_row(X, i);
      for (int k = 0; k < p; ++k) out(i, k) += leaf(k);
    }
  }
  return out;
}

void score_one(const Matrix& draws, const Vector& truth, double level, Eigen::Index unit,
               std::vector<double>& scratch, UnitScores& out) {
  const auto m = draws.rows();
  scratch.assign(draws.col(unit).data(), draws.col(unit).data() + m);
  out.crps(unit) = crps_empirical(scratch, truth(unit));
  std::sort(scratch.begin(), scratch.end());
  const double tail = 0.5 * (1.0 - level);
  out.lower(unit) = quantile_sorted(scratch, tail);
  out.upper(unit) = quantile_sorted(scratch, 1.0 - tail);
}

UnitScores allocate(Eigen::Index n) {
  return {Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
}

void check(const Matrix& draws, const Vector& truth) {
  if (draws.cols() != truth.size()) throw Error(ErrorKind::Shape, "draws and truth differ in units");
  if (draws.rows() == 0) throw Error(ErrorKind::EmptyInput, "no draws to score");
}

}  // namespace

std::vector<Matrix> predict_ensembles_serial(std::span<const EnsembleRef> ensembles,
                                             const Matrix& X, int p) {
  std::vector<Matrix> out(ensembles.size());
  for (std::size_t d = 0; d < ensembles.size(); ++d) out[d] = predict_one(*ensembles[d], X, p);
  return out;
}

std::vector<Matrix> predict_ensembles_omp(std::span<const EnsembleRef> ensembles,
                                          const Matrix& X, int p) {
  std::vector<Matrix> out(ensembles.size());
  const auto count = static_cast<long>(ensembles.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long d = 0; d < count; ++d) out[d] = predict_one(*ensembles[d], X, p);
  return out;
}

UnitScores score_units_serial(const Matrix& draws, const Vector& truth, double level) {
  check(draws, truth);
  UnitScores out = allocate(draws.cols());
  std::vector<double> scratch;
  for (Eigen::Index j = 0; j < draws.cols(); ++j) score_one(draws, truth, level, j, scratch, out);
  return out;
}

UnitScores score_units_omp(const Matrix& draws, const Vector& truth, double level) {
  check(draws, truth);
  UnitScores out = allocate(draws.cols());
  const auto n = static_cast<long>(draws.cols());
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (long j = 0; j < n; ++j) score_one(draws, truth, level, j, scratch, out);
  }
  return out;
}

}  // namespace mvbcf::kernels
