#include <benchmark/benchmark.h>

#include "newscap/bpe.hpp"
#include "newscap/rng.hpp"

using namespace newscap;

namespace {

std::vector<std::string> make_corpus(std::size_t sentences) {
  static const char* kWords[] = {"river",  "council", "bridge", "monday", "storm",
                                 "mayor",  "opens",   "the",    "press",  "crowd",
                                 "harbor", "station", "after",  "nearly", "decade"};
  Rng rng(7);
  std::vector<std::string> corpus;
  for (std::size_t s = 0; s < sentences; ++s) {
    std::string line;
    std::size_t len = 6 + rng.below(8);
    for (std::size_t w = 0; w < len; ++w) {
      if (w) line += " ";
      line += kWords[rng.below(std::size(kWords))];
    }
    corpus.push_back(std::move(line));
  }
  return corpus;
}

const bpe::BpeVocab& shared_vocab() {
  static bpe::BpeVocab vocab = bpe::train_merges(make_corpus(400), 400);
  return vocab;
}

}  // namespace

static void BM_BpeTrain(benchmark::State& state) {
  std::vector<std::string> corpus = make_corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    bpe::BpeVocab vocab = bpe::train_merges(corpus, 350);
    benchmark::DoNotOptimize(vocab.size());
  }
}
BENCHMARK(BM_BpeTrain)->Arg(100)->Arg(400);

static void BM_BpeEncode(benchmark::State& state) {
  const bpe::BpeVocab& vocab = shared_vocab();
  std::vector<std::string> lines = make_corpus(64);
  std::size_t bytes = 0;
  for (const std::string& l : lines) bytes += l.size();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpe::encode(lines[i % lines.size()], vocab));
    ++i;
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes / lines.size()));
}
BENCHMARK(BM_BpeEncode);

static void BM_BpeRoundTrip(benchmark::State& state) {
  const bpe::BpeVocab& vocab = shared_vocab();
  std::string text = make_corpus(8)[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(bpe::decode(bpe::encode(text, vocab), vocab));
  }
}
BENCHMARK(BM_BpeRoundTrip);

BENCHMARK_MAIN();
