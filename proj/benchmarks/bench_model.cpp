#include <benchmark/benchmark.h>

#include "mattforge/model.hpp"
#include "mattforge/rng.hpp"

namespace {

using namespace mattforge;

ModelConfig desk_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.head_dim = 32;
  c.vocab_size = 512;
  c.max_seq = 256;
  return c;
}

std::vector<TokenId> random_ids(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> ids(static_cast<std::size_t>(n));
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
  return ids;
}

void BM_ForwardFull(benchmark::State& state) {
  const auto params = init_params(desk_config(), 1);
  const auto ids = random_ids(static_cast<int>(state.range(0)), 512, 2);
  const ModelView<float> model(params);
  for (auto _ : state) benchmark::DoNotOptimize(forward_full(model, std::span<const TokenId>(ids)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardFull)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_LmLossWithGrad(benchmark::State& state) {
  const auto params = init_params(desk_config(), 1);
  const auto ids = random_ids(static_cast<int>(state.range(0)), 512, 2);
  auto grads = zeros_like(params);
  for (auto _ : state) benchmark::DoNotOptimize(lm_loss(params, std::span<const TokenId>(ids), &grads));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LmLossWithGrad)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TraceDepth2(benchmark::State& state) {
  const auto params = init_params(desk_config(), 1);
  const auto ids = random_ids(256, 512, 2);
  const ModelView<float> model(params);
  for (auto _ : state) benchmark::DoNotOptimize(forward_trace(model, std::span<const TokenId>(ids), 2, TraceLayers::LastOnly));
}
BENCHMARK(BM_TraceDepth2)->Unit(benchmark::kMillisecond);

}  // namespace
