#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvbcf/kernels.hpp"
#include "mvbcf/stats.hpp"

#include <vector>

using namespace mvbcf;

namespace {

std::vector<std::vector<Tree>> random_ensembles(int count, int trees, int p, int d, Rng& rng) {
  std::vector<std::vector<Tree>> out(static_cast<std::size_t>(count));
  for (auto& ensemble : out) {
    for (int t = 0; t < trees; ++t) {
      Tree tree(p);
      for (int s = 0; s < 3; ++s) {
        const std::vector<int> leaves = tree.leaves();
        tree.split(leaves[rng.index(leaves.size())], {static_cast<int>(rng.index(d)), rng.uniform()});
      }
      std::vector<Vector> values;
      for (int l = 0; l < tree.num_leaves(); ++l) {
        Vector v(p);
        for (int k = 0; k < p; ++k) v(k) = rng.normal();
        values.push_back(v);
      }
      tree.set_leaf_values(values);
      ensemble.push_back(tree);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("ensemble prediction: parallel equals serial and the naive sum") {
  Rng rng(1);
  const int d = 4;
  Matrix X = Matrix::NullaryExpr(300, d, [&] { return rng.uniform(); });
  const auto ensembles = random_ensembles(25, 8, 2, d, rng);
  std::vector<kernels::EnsembleRef> refs;
  for (const auto& e : ensembles) refs.push_back(&e);
  const auto serial = kernels::predict_ensembles_serial(refs, X, 2);
  const auto parallel = kernels::predict_ensembles_omp(refs, X, 2);
  REQUIRE(serial.size() == 25);
  for (std::size_t e = 0; e < serial.size(); ++e) {
    CHECK(serial[e] == parallel[e]);
    Matrix naive = Matrix::Zero(300, 2);
    for (const Tree& t : ensembles[e]) {
      for (Eigen::Index i = 0; i < 300; ++i) naive.row(i) += t.predict_row(X, i).transpose();
    }
    CHECK(naive == serial[e]);
  }
}

TEST_CASE("unit scoring: parallel equals serial and the scalar helpers") {
  Rng rng(2);
  const Matrix draws = Matrix::NullaryExpr(200, 50, [&] { return rng.normal(); });
  const Vector truth = Vector::NullaryExpr(50, [&] { return rng.normal(); });
  const kernels::UnitScores a = kernels::score_units_serial(draws, truth, 0.9);
  const kernels::UnitScores b = kernels::score_units_omp(draws, truth, 0.9);
  CHECK(a.crps == b.crps);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  for (Eigen::Index i = 0; i < 50; ++i) {
    std::vector<double> col(draws.col(i).data(), draws.col(i).data() + 200);
    CHECK(a.crps(i) == doctest::Approx(crps_empirical(col, truth(i))).epsilon(1e-12));
    std::sort(col.begin(), col.end());
    CHECK(a.lower(i) == quantile_sorted(col, (1.0 - 0.9) / 2.0));
    CHECK(a.upper(i) == quantile_sorted(col, 1.0 - (1.0 - 0.9) / 2.0));
    CHECK(a.lower(i) <= a.upper(i));
  }
}
