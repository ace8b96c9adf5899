#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "neuraxis/atlas.hpp"
#include "neuraxis/axes.hpp"
#include "neuraxis/rng.hpp"

namespace {

using namespace neuraxis;

atlas::WordAtlas mixed_sources_atlas(int n_words, int n_sources, int state_dim,
                                     std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd S(n_words, n_sources);
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = 0; j < S.cols(); ++j) S(i, j) = rng.laplace(1.0);
  Eigen::MatrixXd A(n_sources, state_dim);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = rng.normal();
  atlas::WordAtlas wa;
  wa.atlas = S * A;
  for (int i = 0; i < n_words; ++i) {
    wa.word_ids.push_back(i);
    wa.counts.push_back(1);
  }
  wa.provenance = "bench";
  return wa;
}

void bm_fit_ica(benchmark::State& state) {
  const auto wa = mixed_sources_atlas(500, static_cast<int>(state.range(0)), 32, 21);
  for (auto _ : state) {
    auto basis = axes::fit_ica(wa, static_cast<int>(state.range(0)), 77);
    benchmark::DoNotOptimize(basis.word_scores.data());
  }
}
BENCHMARK(bm_fit_ica)->Arg(3)->Arg(10)->Unit(benchmark::kMillisecond);

void bm_hungarian(benchmark::State& state) {
  Rng rng(33);
  const Eigen::Index n = state.range(0);
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = rng.uniform();
  for (auto _ : state) {
    auto assign = axes::hungarian_min_assignment(cost);
    benchmark::DoNotOptimize(assign.data());
  }
}
BENCHMARK(bm_hungarian)->Arg(20)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
