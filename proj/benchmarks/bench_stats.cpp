#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <vector>

#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"

namespace {

using namespace neuraxis;

void bm_ridge_solve(benchmark::State& state) {
  Rng rng(3);
  const Eigen::Index n = state.range(0), p = state.range(1);
  Eigen::MatrixXd X(n, p), Y(n, 10);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < 10; ++j) Y(i, j) = rng.normal();
  }
  for (auto _ : state) {
    auto fit = stats::ridge_solve(X, Y, 1.0, true);
    benchmark::DoNotOptimize(fit.weights.data());
  }
}
BENCHMARK(bm_ridge_solve)->Args({600, 9})->Args({2000, 64})->Unit(benchmark::kMicrosecond);

void bm_perm_test(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> a(200), b(200);
  for (auto& v : a) v = rng.normal() + 0.3;
  for (auto& v : b) v = rng.normal();
  for (auto _ : state) {
    auto res = stats::perm_test(a, b, stats::TwoSampleStat::d,
                                static_cast<int>(state.range(0)), 11);
    benchmark::DoNotOptimize(res.p);
  }
}
BENCHMARK(bm_perm_test)->Arg(1000)->Unit(benchmark::kMillisecond);

void bm_bootstrap_ci(benchmark::State& state) {
  Rng rng(9);
  std::vector<double> x(500), y(500);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = 0.5 * x[i] + rng.normal();
  }
  for (auto _ : state) {
    auto ci = stats::bootstrap_ci(x, y, stats::PairedStat::r, 1000, 0.95, 13);
    benchmark::DoNotOptimize(ci.low);
  }
}
BENCHMARK(bm_bootstrap_ci)->Unit(benchmark::kMillisecond);

}  // namespace
