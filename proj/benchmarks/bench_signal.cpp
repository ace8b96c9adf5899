#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cmath>

#include "neuraxis/rng.hpp"
#include "neuraxis/signal.hpp"

namespace {

using namespace neuraxis;

signal::Recording noise_recording(int n_channels, double seconds, double sfreq) {
  Rng rng(42);
  signal::Recording rec;
  rec.sfreq = sfreq;
  rec.samples.resize(n_channels, static_cast<Eigen::Index>(seconds * sfreq));
  for (Eigen::Index c = 0; c < rec.samples.rows(); ++c)
    for (Eigen::Index t = 0; t < rec.samples.cols(); ++t) rec.samples(c, t) = rng.normal();
  return rec;
}

void bm_bandpass(benchmark::State& state) {
  const auto rec = noise_recording(static_cast<int>(state.range(0)), 60.0, 120.0);
  for (auto _ : state) {
    auto out = signal::bandpass_filter(rec, {4.0, 8.0});
    benchmark::DoNotOptimize(out.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * rec.samples.size());
}
BENCHMARK(bm_bandpass)->Arg(8)->Arg(24)->Unit(benchmark::kMillisecond);

void bm_connectivity(benchmark::State& state) {
  const auto rec = noise_recording(static_cast<int>(state.range(0)), 60.0, 120.0);
  const auto filtered = signal::bandpass_filter(rec, {4.0, 8.0});
  const auto phase = signal::analytic_phase(filtered);
  const auto method =
      state.range(1) == 0 ? signal::ConnMethod::plv : signal::ConnMethod::wpli;
  for (auto _ : state) {
    auto edges = signal::connectivity_windows(phase, {2.0, 0.5}, method);
    benchmark::DoNotOptimize(edges.edges.data());
  }
}
BENCHMARK(bm_connectivity)
    ->Args({8, 0})
    ->Args({24, 0})
    ->Args({24, 1})
    ->Unit(benchmark::kMillisecond);

void bm_edge_pca(benchmark::State& state) {
  Rng rng(7);
  std::vector<signal::EdgeSeries> seqs(4);
  for (auto& s : seqs) {
    s.n_channels = 24;
    s.edges.resize(600, signal::edge_count(24));
    for (Eigen::Index i = 0; i < s.edges.rows(); ++i) {
      s.window_times.push_back(static_cast<double>(i) * 0.5);
      for (Eigen::Index j = 0; j < s.edges.cols(); ++j) s.edges(i, j) = rng.uniform();
    }
  }
  for (auto _ : state) {
    auto states = signal::edge_pca(seqs, static_cast<Eigen::Index>(state.range(0)));
    benchmark::DoNotOptimize(states.front().states.data());
  }
}
BENCHMARK(bm_edge_pca)->Arg(10)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
