#include <benchmark/benchmark.h>

#include <vector>

#include "neuraxis/model.hpp"
#include "neuraxis/rng.hpp"

namespace {

using namespace neuraxis;

model::ModelConfig bench_config() {
  model::ModelConfig cfg;
  cfg.vocab_size = 512;
  cfg.d_model = 64;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  cfg.d_ff = 256;
  cfg.context_len = 128;
  cfg.seed = 17;
  return cfg;
}

std::vector<int> random_tokens(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> toks(static_cast<std::size_t>(n));
  for (auto& t : toks) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return toks;
}

void bm_forward(benchmark::State& state) {
  const auto cfg = bench_config();
  const model::ModelWeights w(cfg);
  const auto toks = random_tokens(static_cast<int>(state.range(0)), cfg.vocab_size, 1);
  for (auto _ : state) {
    auto out = model::forward(w, toks, std::nullopt, false);
    benchmark::DoNotOptimize(out.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_forward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void bm_generate(benchmark::State& state) {
  const auto cfg = bench_config();
  const model::ModelWeights w(cfg);
  const auto prompt = random_tokens(16, cfg.vocab_size, 2);
  for (auto _ : state) {
    auto gen = model::generate(w, prompt, static_cast<int>(state.range(0)), 1.0, 5);
    benchmark::DoNotOptimize(gen.tokens.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_generate)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_loss_and_grad(benchmark::State& state) {
  const auto cfg = bench_config();
  const model::ModelWeights w(cfg);
  std::vector<std::vector<int>> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_tokens(64, cfg.vocab_size, 10 + i));
  Eigen::VectorXd grad;
  for (auto _ : state) {
    double loss = model::loss_and_grad(w, batch, grad);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(bm_loss_and_grad)->Unit(benchmark::kMillisecond);

}  // namespace
