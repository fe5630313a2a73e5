#include "mvbcf/kernels.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace mvbcf;

namespace {

struct Fixture {
  Matrix X;
  std::vector<std::vector<Tree>> ensembles;
  std::vector<kernels::EnsembleRef> refs;
  Matrix draws;
  Vector truth;

  Fixture(int n, int m) {
    Rng rng(1);
    const int d = 10;
    X = Matrix::NullaryExpr(n, d, [&] { return rng.uniform(); });
    ensembles.resize(static_cast<std::size_t>(m));
    for (auto& e : ensembles) {
      for (int t = 0; t < 20; ++t) {
        Tree tree(2);
        for (int s = 0; s < 3; ++s) {
          const std::vector<int> leaves = tree.leaves();
          tree.split(leaves[rng.index(leaves.size())], {static_cast<int>(rng.index(d)), rng.uniform()});
        }
        std::vector<Vector> values(static_cast<std::size_t>(tree.num_leaves()), Vector::Constant(2, rng.normal()));
        tree.set_leaf_values(values);
        e.push_back(tree);
      }
    }
    for (const auto& e : ensembles) refs.push_back(&e);
    draws = Matrix::NullaryExpr(m, n, [&] { return rng.normal(); });
    truth = Vector::NullaryExpr(n, [&] { return rng.normal(); });
  }
};

const Fixture& fixture() {
  static const Fixture f(500, 200);
  return f;
}

void BM_PredictSerial(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::predict_ensembles_serial(f.refs, f.X, 2));
}

void BM_PredictOmp(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::predict_ensembles_omp(f.refs, f.X, 2));
}

void BM_ScoreSerial(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::score_units_serial(f.draws, f.truth, 0.95));
}

void BM_ScoreOmp(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::score_units_omp(f.draws, f.truth, 0.95));
}

}  // namespace

BENCHMARK(BM_PredictSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictOmp)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreOmp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
