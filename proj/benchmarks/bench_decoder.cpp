#include <benchmark/benchmark.h>

#include "newscap/decoder.hpp"
#include "newscap/bpe.hpp"
#include "newscap/trainer.hpp"

using namespace newscap;

namespace {

struct Fixture {
  CaptionModel model;
  ContextBundle bundle;
};

Fixture make_fixture() {
  DecoderConfig config;
  config.d_model = 64;
  config.n_heads = 4;
  config.n_blocks = 2;
  config.kernel_sizes = {3, 7};
  config.max_positions = 64;
  ContextSpec ctx;
  ctx.d_image = 32;
  ctx.m_image = 8;
  ctx.d_face = 32;
  ctx.max_faces = 4;
  ctx.d_object = 32;
  ctx.max_objects = 4;
  ctx.d_article = 32;
  ctx.n_layers = 3;
  CaptionModel model =
      CaptionModel::init(config, ctx, ClusterSpec::with_cutoffs({200, 400, 400}), 1000, 1);
  ContextBundle bundle = synth_context(2, ctx, 2, 3, 48, 1000);
  return Fixture{std::move(model), std::move(bundle)};
}

std::vector<int> caption_ids() { return {300, 12, 700, 45, 260, 3, 512, 90, 31, 410, 7, 888}; }

}  // namespace

static void BM_DecodeStepForward(benchmark::State& state) {
  Fixture f = make_fixture();
  for (auto _ : state) {
    Tape tape;
    DecoderRun run(tape, f.model, f.bundle, 0, f.bundle.article_len(), /*trainable=*/false);
    Var h = run.step(bpe::kBosId);
    for (int id : caption_ids()) h = run.step(id);
    benchmark::DoNotOptimize(tape.value(h)[0]);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(caption_ids().size() + 1));
}
BENCHMARK(BM_DecodeStepForward)->Unit(benchmark::kMillisecond);

static void BM_SequenceNllBackward(benchmark::State& state) {
  Fixture f = make_fixture();
  std::vector<Tensor*> params = f.model.param_list();
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->grad();
  }
  std::vector<int> ids = caption_ids();
  for (auto _ : state) {
    for (Tensor* p : params) p->zero_grad();
    Tape tape;
    SequenceLoss loss = sequence_nll(tape, f.model, f.bundle, 0, f.bundle.article_len(), ids,
                                     /*trainable=*/true);
    tape.backward(loss.total);
    benchmark::DoNotOptimize(tape.value(loss.total)[0]);
  }
}
BENCHMARK(BM_SequenceNllBackward)->Unit(benchmark::kMillisecond);
