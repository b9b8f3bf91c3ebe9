#include <cmath>

#include "doctest.h"
#include "newscap/bpe.hpp"
#include "newscap/decoder.hpp"

using namespace newscap;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

ContextSpec tiny_ctx() {
  ContextSpec s;
  s.d_image = 8;
  s.m_image = 3;
  s.d_face = 8;
  s.max_faces = 2;
  s.d_object = 8;
  s.max_objects = 3;
  s.d_article = 8;
  s.n_layers = 2;
  return s;
}

CaptionModel tiny_model(std::uint64_t seed = 1) {
  DecoderConfig config;
  config.d_model = 16;
  config.n_heads = 2;
  config.n_blocks = 2;
  config.kernel_sizes = {3, 3};
  config.max_positions = 12;
  return CaptionModel::init(config, tiny_ctx(), ClusterSpec::with_cutoffs({20, 15, 15}), 50, seed);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("dynamic_conv: singleton kernel is the plain projection") {
  CaptionModel model = tiny_model();
  ConvHeadParams& head = model.params.blocks[0].conv_heads[0];
  Tensor z = random_tensor({16}, 3);

  Tape tape;
  VarCache cache(tape, false);
  Var zv = tape.leaf(z);
  std::vector<Var> window = {zv};
  Tensor out = tape.value(dynamic_conv(tape, window, 1, head, cache));
  Tensor proj = tape.value(tape.glu(tape.linear(tape.leaf(z), tape.leaf(head.w_proj),
                                                tape.leaf(head.b_proj))));
  REQUIRE(out.size() == proj.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i] - proj[i]) <= 1e-12);
  }

  CHECK_THROWS_AS(dynamic_conv(tape, window, 2, head, cache), ContractError);
}

TEST_CASE("dynamic_conv: identical window positions give the shared projection") {
  CaptionModel model = tiny_model();
  ConvHeadParams& head = model.params.blocks[0].conv_heads[1];
  Tensor z = random_tensor({16}, 4);
  Tape tape;
  VarCache cache(tape, false);
  Var zv = tape.leaf(z);
  std::vector<Var> window = {zv, zv, zv};
  std::vector<double> gamma;
  Tensor out = tape.value(dynamic_conv(tape, window, 3, head, cache, &gamma));
  Tensor proj = tape.value(tape.glu(tape.linear(tape.leaf(z), tape.leaf(head.w_proj),
                                                tape.leaf(head.b_proj))));
  double gamma_sum = gamma[0] + gamma[1] + gamma[2];
  CHECK(std::abs(gamma_sum - 1.0) < 1e-12);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i] - proj[i]) <= 1e-12);
  }
}

TEST_CASE("dynamic_conv: K=3 brute-force recomputation oracle") {
  CaptionModel model = tiny_model(11);
  ConvHeadParams& head = model.params.blocks[1].conv_heads[0];
  std::vector<Tensor> window_vals;
  for (int j = 0; j < 3; ++j) window_vals.push_back(random_tensor({16}, 100 + j));

  Tape tape;
  VarCache cache(tape, false);
  std::vector<Var> window;
  for (const Tensor& w : window_vals) window.push_back(tape.leaf(w));
  Tensor out = tape.value(dynamic_conv(tape, window, 3, head, cache));

  // Straight re-computation with plain loops.
  std::size_t dh = 8, D = 16;
  std::vector<std::vector<double>> projs;
  std::vector<double> scores;
  for (const Tensor& z : window_vals) {
    std::vector<double> pre(2 * dh, 0.0);
    for (std::size_t i = 0; i < 2 * dh; ++i) {
      pre[i] = head.b_proj[i];
      for (std::size_t j = 0; j < D; ++j) pre[i] += head.w_proj.at(i, j) * z[j];
    }
    std::vector<double> proj(dh);
    for (std::size_t i = 0; i < dh; ++i) proj[i] = pre[i] * sigmoid(pre[dh + i]);
    double score = 0.0;
    for (std::size_t i = 0; i < dh; ++i) score += head.w_dyn[i] * proj[i];
    projs.push_back(std::move(proj));
    scores.push_back(score);
  }
  double mx = std::max({scores[0], scores[1], scores[2]});
  double denom = 0.0;
  std::vector<double> gamma(3);
  for (int j = 0; j < 3; ++j) {
    gamma[j] = std::exp(scores[j] - mx);
    denom += gamma[j];
  }
  for (int j = 0; j < 3; ++j) gamma[j] /= denom;
  for (std::size_t i = 0; i < dh; ++i) {
    double want = gamma[0] * projs[0][i] + gamma[1] * projs[1][i] + gamma[2] * projs[2][i];
    CHECK(std::abs(out[i] - want) <= 1e-12);
  }
}

TEST_CASE("conv_block_output: dead projection leaves LayerNorm(z)") {
  CaptionModel model = tiny_model(5);
  BlockParams& blk = model.params.blocks[0];
  for (double& v : blk.conv_out_w.data()) v = 0.0;
  for (double& v : blk.conv_out_b.data()) v = 0.0;

  Tensor z = random_tensor({16}, 6);
  Tape tape;
  VarCache cache(tape, false);
  Var zv = tape.leaf(z);
  std::vector<Var> heads;
  std::vector<Var> window = {zv};
  for (std::size_t h = 0; h < model.config.n_heads; ++h) {
    heads.push_back(dynamic_conv(tape, window, 1, blk.conv_heads[h], cache));
  }
  Tensor d = tape.value(conv_block_output(tape, zv, heads, blk, cache));
  Tensor ln = tape.value(tape.layer_norm(tape.leaf(z), tape.leaf(blk.conv_ln_gain),
                                         tape.leaf(blk.conv_ln_bias), 1e-5));
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == ln[i]);

  std::vector<Var> wrong = {heads[0]};
  CHECK_THROWS_AS(conv_block_output(tape, zv, wrong, blk, cache), ContractError);
}

TEST_CASE("conv_block_output: one head equals the concat-free path") {
  DecoderConfig config;
  config.d_model = 8;
  config.n_heads = 1;
  config.n_blocks = 1;
  config.kernel_sizes = {3};
  config.max_positions = 4;
  ContextSpec ctx;
  ctx.d_image = 4;
  ctx.m_image = 2;
  ctx.d_face = 4;
  ctx.max_faces = 1;
  ctx.d_object = 4;
  ctx.max_objects = 1;
  ctx.d_article = 4;
  ctx.n_layers = 2;
  CaptionModel model = CaptionModel::init(config, ctx, ClusterSpec::single(20), 20, 3);
  BlockParams& blk = model.params.blocks[0];

  Tensor z = random_tensor({8}, 4);
  Tape tape;
  VarCache cache(tape, false);
  Var zv = tape.leaf(z);
  std::vector<Var> window = {zv, zv, zv};
  Var head = dynamic_conv(tape, window, 3, blk.conv_heads[0], cache);
  std::vector<Var> heads = {head};
  Tensor combined = tape.value(conv_block_output(tape, zv, heads, blk, cache));

  // Concat-free: project the single head output directly.
  Var direct = tape.layer_norm(
      tape.add(zv, tape.linear(head, tape.leaf(blk.conv_out_w), tape.leaf(blk.conv_out_b))),
      tape.leaf(blk.conv_ln_gain), tape.leaf(blk.conv_ln_bias), 1e-5);
  Tensor want = tape.value(direct);
  for (std::size_t i = 0; i < combined.size(); ++i) CHECK(combined[i] == want[i]);
}

TEST_CASE("attend_domain: singleton context is the projected value path") {
  CaptionModel model = tiny_model(7);
  DomainAttnParams& attn = model.params.blocks[0].attn[static_cast<std::size_t>(Domain::image)];
  Tensor d = random_tensor({16}, 8);
  Tensor X = random_tensor({1, 8}, 9);

  Tape tape;
  VarCache cache(tape, false);
  Tensor out = tape.value(attend_domain(tape, tape.leaf(d), tape.leaf(X), attn, model.config,
                                        cache));

  // By hand: lambda = [1], so each head's output is W^V x_1.
  Tape t2;
  std::vector<Var> head_outs;
  for (AttnHeadParams& h : attn.heads) {
    head_outs.push_back(t2.matvec(t2.leaf(h.wv), t2.row(t2.leaf(X), 0)));
  }
  Var cat = t2.concat(head_outs);
  Tensor want = t2.value(t2.layer_norm(t2.add(t2.leaf(d), cat), t2.leaf(attn.ln_gain),
                                       t2.leaf(attn.ln_bias), 1e-5));
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("attend_domain: identical keys average the distinct values") {
  // One head; the key projection reads only coordinate 0, so rows agreeing
  // there share a key while their value projections differ.
  DecoderConfig config;
  config.d_model = 4;
  config.n_heads = 1;
  config.n_blocks = 1;
  config.kernel_sizes = {1};
  config.attention_scaling = true;
  config.max_positions = 4;

  DomainAttnParams attn;
  attn.heads.resize(1);
  attn.heads[0].wq = random_tensor({4, 4}, 21);
  attn.heads[0].wk = Tensor::matrix(4, 2, {1, 0, 0, 0, 0, 0, 0, 0});
  attn.heads[0].wv = random_tensor({4, 2}, 22);
  attn.ln_gain = Tensor::full({4}, 1.0);
  attn.ln_bias = Tensor({4});

  Tensor X = Tensor::matrix(2, 2, {0.7, 5.0, 0.7, -3.0});  // same coord 0, different coord 1
  Tensor d = random_tensor({4}, 23);

  Tape tape;
  VarCache cache(tape, false);
  Tensor out = tape.value(attend_domain(tape, tape.leaf(d), tape.leaf(X), attn, config, cache));

  Tape t2;
  Var xv = t2.leaf(X);
  Var va = t2.matvec(t2.leaf(attn.heads[0].wv), t2.row(xv, 0));
  Var vb = t2.matvec(t2.leaf(attn.heads[0].wv), t2.row(xv, 1));
  Var mean = t2.scale(t2.add(va, vb), 0.5);
  Tensor want = t2.value(t2.layer_norm(t2.add(t2.leaf(d), mean), t2.leaf(attn.ln_gain),
                                       t2.leaf(attn.ln_bias), 1e-5));
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("attend_domain: scaling flag switches between scaled and bare scores") {
  CaptionModel model = tiny_model(27);
  DomainAttnParams& attn = model.params.blocks[0].attn[static_cast<std::size_t>(Domain::image)];
  Tensor d = random_tensor({16}, 28);
  Tensor X = random_tensor({3, 8}, 29);

  auto lambdas = [&](bool scaling) {
    DecoderConfig config = model.config;
    config.attention_scaling = scaling;
    Tape tape;
    VarCache cache(tape, false);
    DecoderTrace trace;
    attend_domain(tape, tape.leaf(d), tape.leaf(X), attn, config, cache, &trace);
    return trace.attn_lambdas;
  };
  auto scores_head0 = [&]() {
    // raw scores for head 0 by hand
    Tape tape;
    Var q = tape.matvec(tape.leaf(attn.heads[0].wq), tape.leaf(d));
    Var k = tape.matmul_nt(tape.leaf(X), tape.leaf(attn.heads[0].wk));
    return Tensor(tape.value(tape.matvec(k, q)));
  };
  Tensor raw = scores_head0();
  auto softmax_of = [](std::vector<double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double denom = 0.0;
    for (double& x : v) {
      x = std::exp(x - mx);
      denom += x;
    }
    for (double& x : v) x /= denom;
    return v;
  };
  double scale = 1.0 / std::sqrt(8.0);  // head_dim = 16 / 2

  auto on = lambdas(true);
  auto off = lambdas(false);
  std::vector<double> raw_scores = raw.data();
  std::vector<double> scaled_scores = raw_scores;
  for (double& s : scaled_scores) s *= scale;
  std::vector<double> want_on = softmax_of(scaled_scores);
  std::vector<double> want_off = softmax_of(raw_scores);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(on[0][i] == doctest::Approx(want_on[i]).epsilon(1e-12));
    CHECK(off[0][i] == doctest::Approx(want_off[i]).epsilon(1e-12));
  }
}

TEST_CASE("attend_domain: invariant under context row permutation") {
  CaptionModel model = tiny_model(31);
  DomainAttnParams& attn = model.params.blocks[0].attn[static_cast<std::size_t>(Domain::objects)];
  Tensor d = random_tensor({16}, 32);
  Tensor X = random_tensor({5, 8}, 33);
  Tensor Xperm({5, 8});
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 8; ++c) Xperm.at(r, c) = X.at(perm[r], c);
  }
  Tape t1, t2;
  VarCache c1(t1, false), c2(t2, false);
  Tensor a = t1.value(attend_domain(t1, t1.leaf(d), t1.leaf(X), attn, model.config, c1));
  Tensor b = t2.value(attend_domain(t2, t2.leaf(d), t2.leaf(Xperm), attn, model.config, c2));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("attend_domain: empty context reduces to LayerNorm(d)") {
  CaptionModel model = tiny_model(41);
  DomainAttnParams& attn = model.params.blocks[0].attn[static_cast<std::size_t>(Domain::faces)];
  Tensor d = random_tensor({16}, 42);
  Tape tape;
  VarCache cache(tape, false);
  Tensor out = tape.value(attend_domain(tape, tape.leaf(d), tape.leaf(Tensor({0, 8})), attn,
                                        model.config, cache));
  Tensor want = tape.value(tape.layer_norm(tape.leaf(d), tape.leaf(attn.ln_gain),
                                           tape.leaf(attn.ln_bias), 1e-5));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == want[i]);

  // Dim mismatch between the context and the domain projection.
  CHECK_THROWS_AS(attend_domain(tape, tape.leaf(d), tape.leaf(Tensor({2, 5})), attn,
                                model.config, cache),
                  DimensionError);
}

TEST_CASE("fuse_contexts: dead second branch and ReLU cutoff") {
  CaptionModel model = tiny_model(51);
  BlockParams& blk = model.params.blocks[1];
  Tensor xi = random_tensor({16}, 52), xa = random_tensor({16}, 53),
         xf = random_tensor({16}, 54), xo = random_tensor({16}, 55);

  auto fused = [&](BlockParams& b) {
    Tape tape;
    VarCache cache(tape, false);
    return tape.value(fuse_contexts(tape, tape.leaf(xi), tape.leaf(xa), tape.leaf(xf),
                                    tape.leaf(xo), b, cache));
  };
  auto c1_ln = [&](BlockParams& b) {
    Tape tape;
    std::array<Var, 4> parts = {tape.leaf(xi), tape.leaf(xa), tape.leaf(xf), tape.leaf(xo)};
    Var c1 = tape.linear(tape.concat(parts), tape.leaf(b.fuse_w1), tape.leaf(b.fuse_b1));
    return tape.value(tape.layer_norm(c1, tape.leaf(b.fuse_ln_gain), tape.leaf(b.fuse_ln_bias),
                                      1e-5));
  };

  // W3 = 0, b3 = 0: only the first projection survives.
  BlockParams zeroed = blk;
  for (double& v : zeroed.fuse_w3.data()) v = 0.0;
  for (double& v : zeroed.fuse_b3.data()) v = 0.0;
  Tensor a = fused(zeroed);
  Tensor want = c1_ln(zeroed);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == want[i]);

  // All-negative pre-activation: ReLU zeroes the branch, so with b3 = 0 the
  // outcome matches the dead-branch case.
  BlockParams negative = blk;
  for (double& v : negative.fuse_w2.data()) v = 0.0;
  for (double& v : negative.fuse_b2.data()) v = -1.0;
  for (double& v : negative.fuse_b3.data()) v = 0.0;
  Tensor b2 = fused(negative);
  Tensor want2 = c1_ln(negative);
  for (std::size_t i = 0; i < b2.size(); ++i) CHECK(b2[i] == want2[i]);
}

TEST_CASE("decode_step: shape, determinism, and capacity") {
  CaptionModel model = tiny_model(61);
  ContextBundle bundle = synth_context(62, model.ctx_spec, 1, 2, 6, model.vocab_size);

  auto run_ids = [&](const std::vector<int>& ids) {
    Tape tape;
    DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false);
    Tensor last;
    for (int id : ids) last = tape.value(run.step(id));
    return last;
  };
  Tensor h1 = run_ids({bpe::kBosId, 5, 9});
  Tensor h2 = run_ids({bpe::kBosId, 5, 9});
  CHECK(h1.shape() == std::vector<std::size_t>{16});
  CHECK(h1.data() == h2.data());  // bit-identical

  {
    Tape tape;
    DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false);
    CHECK_THROWS_AS(run.step(static_cast<int>(model.vocab_size)), DomainError);
  }
  Tape tape;
  DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false);
  for (std::size_t t = 0; t < model.config.max_positions; ++t) run.step(1);
  CHECK_THROWS_AS(run.step(1), CapacityError);
  CHECK(run.history()[0].size() == model.config.max_positions);
  CHECK(run.history()[model.config.n_blocks].size() == model.config.max_positions);
}

TEST_CASE("decode_step: zeroed value paths ignore the contexts") {
  CaptionModel model = tiny_model(71);
  // Zero every attention value projection: contexts cannot reach the output.
  for (BlockParams& blk : model.params.blocks) {
    for (auto& domain : blk.attn) {
      for (AttnHeadParams& head : domain.heads) {
        for (double& v : head.wv.data()) v = 0.0;
      }
    }
  }
  ContextBundle b1 = synth_context(72, model.ctx_spec, 2, 1, 6, model.vocab_size);
  ContextBundle b2 = synth_context(73, model.ctx_spec, 2, 1, 6, model.vocab_size);

  Tensor ha, hb;
  {
    Tape tape;
    DecoderRun run(tape, model, b1, 0, b1.article_len(), false);
    for (int id : {bpe::kBosId, 4, 8, 15}) ha = tape.value(run.step(id));
  }
  {
    Tape tape;
    DecoderRun run(tape, model, b2, 0, b2.article_len(), false);
    for (int id : {bpe::kBosId, 4, 8, 15}) hb = tape.value(run.step(id));
  }
  for (std::size_t i = 0; i < ha.size(); ++i) CHECK(std::abs(ha[i] - hb[i]) <= 1e-12);
}

TEST_CASE("decoder: causality against future-token edits") {
  CaptionModel model = tiny_model(81);
  ContextBundle bundle = synth_context(82, model.ctx_spec, 1, 1, 6, model.vocab_size);
  std::vector<int> tokens = {bpe::kBosId, 3, 14, 25, 36, 47, 8, 19, 30, 41};

  std::vector<Tensor> full;
  {
    Tape tape;
    DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false);
    for (int id : tokens) full.push_back(tape.value(run.step(id)));
  }
  Rng rng(83);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    std::vector<int> mutated = tokens;
    for (std::size_t j = t + 1; j < mutated.size(); ++j) {
      mutated[j] = static_cast<int>(rng.below(model.vocab_size));
    }
    Tape tape;
    DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false);
    Tensor at_t;
    for (std::size_t j = 0; j <= t; ++j) at_t = tape.value(run.step(mutated[j]));
    for (std::size_t i = 0; i < at_t.size(); ++i) {
      CHECK(std::abs(at_t[i] - full[t][i]) <= 1e-10);
    }
  }
}

TEST_CASE("decoder: attention and convolution weights sum to one") {
  CaptionModel model = tiny_model(91);
  ContextBundle bundle = synth_context(92, model.ctx_spec, 2, 3, 6, model.vocab_size);
  DecoderTrace trace;
  Tape tape;
  DecoderRun run(tape, model, bundle, 0, bundle.article_len(), false, &trace);
  for (int id : {bpe::kBosId, 10, 20, 30}) run.step(id);

  CHECK(trace.conv_gammas.size() == 4 * model.config.n_blocks * model.config.n_heads);
  for (const auto& gamma : trace.conv_gammas) {
    double s = 0.0;
    for (double g : gamma) s += g;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK(!trace.attn_lambdas.empty());
  for (const auto& lambda : trace.attn_lambdas) {
    double s = 0.0;
    for (double l : lambda) s += l;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("sequence_nll: loss structure") {
  CaptionModel model = tiny_model(95);
  ContextBundle bundle = synth_context(96, model.ctx_spec, 1, 1, 6, model.vocab_size);
  std::vector<int> caption = {4, 9, 16};
  Tape tape;
  SequenceLoss loss = sequence_nll(tape, model, bundle, 0, bundle.article_len(), caption, false);
  CHECK(loss.n_tokens == 4);
  CHECK(loss.per_token.size() == 4);
  CHECK(tape.value(loss.total)[0] > 0.0);

  std::vector<int> preds = teacher_forced_argmax(model, bundle, 0, bundle.article_len(), caption);
  CHECK(preds.size() == 4);
  for (int p : preds) {
    CHECK(p >= 0);
    CHECK(p < static_cast<int>(model.vocab_size));
  }

  // Empty face and object domains flow through the whole loss path.
  ContextBundle sparse = synth_context(97, model.ctx_spec, 0, 0, 6, model.vocab_size);
  Tape t2;
  SequenceLoss sparse_loss = sequence_nll(t2, model, sparse, 0, sparse.article_len(), caption,
                                          false);
  CHECK(t2.value(sparse_loss.total)[0] > 0.0);
}
