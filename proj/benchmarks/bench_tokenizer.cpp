#include <benchmark/benchmark.h>

#include "mattforge/tokenizer.hpp"

namespace {

using namespace mattforge;

Corpus sample_corpus() {
  const std::string para =
      "Now is the winter of our discontent made glorious summer by this sun of York; and all the clouds that "
      "lour'd upon our house in the deep bosom of the ocean buried. ";
  Corpus c;
  for (int i = 0; i < 200; ++i) c.push_back(para + std::to_string(i));
  return c;
}

void BM_TrainBpe(benchmark::State& state) {
  const Corpus corpus = sample_corpus();
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(corpus, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_TrainBpe)->Arg(384)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const Corpus corpus = sample_corpus();
  const Vocab vocab = train_bpe(corpus, 512);
  std::int64_t bytes = 0;
  for (auto _ : state) {
    for (const auto& doc : corpus) {
      benchmark::DoNotOptimize(encode(vocab, doc));
      bytes += static_cast<std::int64_t>(doc.size());
    }
  }
  state.SetBytesProcessed(bytes);
}
BENCHMARK(BM_Encode);

}  // namespace
