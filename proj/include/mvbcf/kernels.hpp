#pragma once

// Data-parallel kernels used by prediction and scoring. Each has a serial
// reference and an OpenMP version that must agree bit for bit: parallelism
// is over independent outputs only, never over a floating-point reduction.

#include "mvbcf/tree.hpp"

#include <span>
#include <vector>

namespace mvbcf::kernels {

using EnsembleRef = const std::vector<Tree>*;

/// Sum-of-trees prediction of every ensemble at every row of X (n x p each).
/// Trees are summed in order starting from zero.
std::vector<Matrix> predict_ensembles_serial(std::span<const EnsembleRef> ensembles,
                                             const Matrix& X, int p);
std::vector<Matrix> predict_ensembles_omp(std::span<const EnsembleRef> ensembles,
                                          const Matrix& X, int p);

struct UnitScores {
  Vector crps;
  Vector lower;
  Vector upper;
};

/// `draws` is m x n (one column per unit). Equal-tailed interval at `level`.
UnitScores score_units_serial(const Matrix& draws, const Vector& truth, double level);
UnitScores score_units_omp(const Matrix& draws, const Vector& truth, double level);

inline std::vector<Matrix> predict_ensembles(std::span<const EnsembleRef> ensembles,
                                             const Matrix& X, int p) {
  return predict_ensembles_omp(ensembles, X, p);
}
inline UnitScores score_units(const Matrix& draws, const Vector& truth, double level) {
  return score_units_omp(draws, truth, level);
}

}  // namespace mvbcf::kernels
