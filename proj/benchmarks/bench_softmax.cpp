#include <benchmark/benchmark.h>

#include "newscap/adaptive_softmax.hpp"

using namespace newscap;

namespace {

struct Fixture {
  ClusterSpec spec = ClusterSpec::with_cutoffs({200, 400, 400});
  AdaptiveSoftmaxParams params;
  Tensor h;
  Fixture() {
    Rng rng(3);
    params = AdaptiveSoftmaxParams::init(64, spec, rng);
    h = Tensor({64});
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1.0, 1.0);
  }
};

}  // namespace

// The head-cluster fast path against a tail-cluster target and the full
// distribution, at the desk-scale vocabulary of 1000.
static void BM_AdaptiveNllHead(benchmark::State& state) {
  Fixture f;
  for (auto _ : state) {
    Tape tape;
    VarCache cache(tape, false);
    Var loss = adaptive_softmax::nll_loss(tape, tape.leaf(f.h), 17, f.params, f.spec, cache);
    benchmark::DoNotOptimize(tape.value(loss)[0]);
  }
}
BENCHMARK(BM_AdaptiveNllHead);

static void BM_AdaptiveNllTail(benchmark::State& state) {
  Fixture f;
  for (auto _ : state) {
    Tape tape;
    VarCache cache(tape, false);
    Var loss = adaptive_softmax::nll_loss(tape, tape.leaf(f.h), 750, f.params, f.spec, cache);
    benchmark::DoNotOptimize(tape.value(loss)[0]);
  }
}
BENCHMARK(BM_AdaptiveNllTail);

static void BM_AdaptiveFullLogProb(benchmark::State& state) {
  Fixture f;
  for (auto _ : state) {
    Tape tape;
    VarCache cache(tape, false);
    Var lp = adaptive_softmax::log_prob(tape, tape.leaf(f.h), f.params, f.spec, cache);
    benchmark::DoNotOptimize(tape.value(lp)[0]);
  }
}
BENCHMARK(BM_AdaptiveFullLogProb);
