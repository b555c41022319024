#include <benchmark/benchmark.h>

#include "mattforge/aim.hpp"
#include "mattforge/rng.hpp"

namespace {

using namespace mattforge;

struct Fixture {
  Parameters<float> params;
  std::vector<TokenId> ids;
  std::vector<int> seg;
  std::vector<int> ell;

  explicit Fixture(int n) {
    ModelConfig c;
    c.n_layers = 4;
    c.vocab_size = 512;
    params = init_params(c, 3);
    Rng rng(4);
    for (int t = 0; t < n; ++t) ids.push_back(static_cast<TokenId>(rng.below(512)));
    // Segments of one or two tokens.
    int s = -1;
    for (int t = 0; t < n; ++t) {
      if (t == 0 || rng.below(3) != 0) {
        if (t > 0) ell.push_back(t - 1);
        ++s;
      }
      seg.push_back(s);
    }
    ell.push_back(n - 1);
  }
};

void BM_AimFullStep(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  const ModelView<float> model(f.params);
  for (auto _ : state) {
    const auto trace = forward_trace(model, std::span<const TokenId>(f.ids), 2, TraceLayers::LastOnly);
    const auto states = segment_states(trace, f.seg, f.ell);
    auto r = aim_loss(states, states, AimKernel::Mse);
    auto up = segment_states_backward(trace, f.seg, f.ell, r.grad);
    benchmark::DoNotOptimize(embedding_grad(model, trace, up));
  }
}
BENCHMARK(BM_AimFullStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_AimStarStep(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  const ModelView<float> model(f.params);
  for (auto _ : state) {
    const auto trace = forward_trace(model, std::span<const TokenId>(f.ids), 2, TraceLayers::LastOnly);
    const auto outputs = segment_outputs(trace, f.ell);
    auto r = aim_star_loss(outputs, outputs, AimKernel::Mse);
    auto up = segment_outputs_backward(trace, f.ell, r.grad);
    benchmark::DoNotOptimize(embedding_grad(model, trace, up));
  }
}
BENCHMARK(BM_AimStarStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
