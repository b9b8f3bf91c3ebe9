#include "newscap/decoder.hpp"

#include <cmath>

#include "newscap/bpe.hpp"

namespace newscap {

namespace {

Tensor uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
  m.set_requires_grad(true);
  return m;
}

Tensor uniform_vector(std::size_t n, double bound, Rng& rng) {
  Tensor v({n});
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
  v.set_requires_grad(true);
  return v;
}

Tensor grad_ones(std::size_t n) {
  Tensor v = Tensor::full({n}, 1.0);
  v.set_requires_grad(true);
  return v;
}

Tensor grad_zeros(std::size_t n) {
  Tensor v({n});
  v.set_requires_grad(true);
  return v;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

DecoderConfig DecoderConfig::full_scale() {
  DecoderConfig c;
  c.d_model = 1024;
  c.n_heads = 16;
  c.n_blocks = 4;
  c.kernel_sizes = {3, 7, 15, 31};
  c.attention_scaling = true;
  c.max_positions = 512;
  return c;
}

void DecoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_blocks == 0 || max_positions == 0) {
    throw ValidationError("decoder config: sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("decoder config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (kernel_sizes.size() != n_blocks) {
    throw ValidationError("decoder config: " + std::to_string(kernel_sizes.size()) +
                          " kernel sizes for " + std::to_string(n_blocks) + " blocks");
  }
  for (std::size_t k : kernel_sizes) {
    if (k < 1) throw ValidationError("decoder config: kernel sizes must be at least 1");
  }
}

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::image: return "image";
    case Domain::article: return "article";
    case Domain::faces: return "faces";
    case Domain::objects: return "objects";
  }
  return "?";
}

CaptionModel CaptionModel::init(const DecoderConfig& config, const ContextSpec& ctx_spec,
                                const ClusterSpec& clusters, std::size_t vocab_size,
                                std::uint64_t seed) {
  config.validate();
  ctx_spec.validate();
  clusters.validate(vocab_size, config.d_model);

  CaptionModel m;
  m.config = config;
  m.ctx_spec = ctx_spec;
  m.clusters = clusters;
  m.vocab_size = vocab_size;

  Rng rng(seed);
  std::size_t D = config.d_model;
  std::size_t dh = config.head_dim();
  double bd = 1.0 / std::sqrt(static_cast<double>(D));
  double bdh = 1.0 / std::sqrt(static_cast<double>(dh));

  m.params.token_embed = uniform_matrix(vocab_size, D, bd, rng);
  m.params.pos_embed = uniform_matrix(config.max_positions, D, bd, rng);
  m.params.layer_mix_logits = grad_zeros(ctx_spec.n_layers);

  const std::array<std::size_t, kNumDomains> domain_dims = {ctx_spec.d_image, ctx_spec.d_article,
                                                            ctx_spec.d_face, ctx_spec.d_object};
  m.params.blocks.resize(config.n_blocks);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    BlockParams& blk = m.params.blocks[b];
    blk.conv_heads.resize(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      blk.conv_heads[h].w_proj = uniform_matrix(2 * dh, D, bd, rng);
      blk.conv_heads[h].b_proj = uniform_vector(2 * dh, bd, rng);
      blk.conv_heads[h].w_dyn = uniform_vector(dh, bdh, rng);
    }
    blk.conv_out_w = uniform_matrix(D, D, bd, rng);
    blk.conv_out_b = uniform_vector(D, bd, rng);
    blk.conv_ln_gain = grad_ones(D);
    blk.conv_ln_bias = grad_zeros(D);
    for (std::size_t dom = 0; dom < kNumDomains; ++dom) {
      DomainAttnParams& ap = blk.attn[dom];
      double bdom = 1.0 / std::sqrt(static_cast<double>(domain_dims[dom]));
      ap.heads.resize(config.n_heads);
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        ap.heads[h].wq = uniform_matrix(dh, D, bd, rng);
        ap.heads[h].wk = uniform_matrix(dh, domain_dims[dom], bdom, rng);
        ap.heads[h].wv = uniform_matrix(dh, domain_dims[dom], bdom, rng);
      }
      ap.ln_gain = grad_ones(D);
      ap.ln_bias = grad_zeros(D);
    }
    double b4d = 1.0 / std::sqrt(static_cast<double>(4 * D));
    blk.fuse_w1 = uniform_matrix(D, 4 * D, b4d, rng);
    blk.fuse_b1 = uniform_vector(D, b4d, rng);
    blk.fuse_w2 = uniform_matrix(D, D, bd, rng);
    blk.fuse_b2 = uniform_vector(D, bd, rng);
    blk.fuse_w3 = uniform_matrix(D, D, bd, rng);
    blk.fuse_b3 = uniform_vector(D, bd, rng);
    blk.fuse_ln_gain = grad_ones(D);
    blk.fuse_ln_bias = grad_zeros(D);
  }
  m.params.softmax = AdaptiveSoftmaxParams::init(D, clusters, rng);
  return m;
}

void CaptionModel::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("token_embed", params.token_embed);
  fn("pos_embed", params.pos_embed);
  fn("layer_mix.logits", params.layer_mix_logits);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    BlockParams& blk = params.blocks[b];
    std::string pre = "block" + std::to_string(b);
    for (std::size_t h = 0; h < blk.conv_heads.size(); ++h) {
      std::string hp = pre + ".conv.head" + std::to_string(h);
      fn(hp + ".w_proj", blk.conv_heads[h].w_proj);
      fn(hp + ".b_proj", blk.conv_heads[h].b_proj);
      fn(hp + ".w_dyn", blk.conv_heads[h].w_dyn);
    }
    fn(pre + ".conv.out_w", blk.conv_out_w);
    fn(pre + ".conv.out_b", blk.conv_out_b);
    fn(pre + ".conv.ln_gain", blk.conv_ln_gain);
    fn(pre + ".conv.ln_bias", blk.conv_ln_bias);
    for (std::size_t dom = 0; dom < kNumDomains; ++dom) {
      DomainAttnParams& ap = blk.attn[dom];
      std::string dp = pre + ".attn." + domain_name(static_cast<Domain>(dom));
      for (std::size_t h = 0; h < ap.heads.size(); ++h) {
        std::string hp = dp + ".head" + std::to_string(h);
        fn(hp + ".wq", ap.heads[h].wq);
        fn(hp + ".wk", ap.heads[h].wk);
        fn(hp + ".wv", ap.heads[h].wv);
      }
      fn(dp + ".ln_gain", ap.ln_gain);
      fn(dp + ".ln_bias", ap.ln_bias);
    }
    fn(pre + ".fuse.w1", blk.fuse_w1);
    fn(pre + ".fuse.b1", blk.fuse_b1);
    fn(pre + ".fuse.w2", blk.fuse_w2);
    fn(pre + ".fuse.b2", blk.fuse_b2);
    fn(pre + ".fuse.w3", blk.fuse_w3);
    fn(pre + ".fuse.b3", blk.fuse_b3);
    fn(pre + ".fuse.ln_gain", blk.fuse_ln_gain);
    fn(pre + ".fuse.ln_bias", blk.fuse_ln_bias);
  }
  params.softmax.visit("softmax", fn);
}

std::vector<Tensor*> CaptionModel::param_list() {
  std::vector<Tensor*> out;
  visit_params([&out](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> CaptionModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_params([&out](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

std::size_t CaptionModel::param_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

void CaptionModel::validate() const {
  config.validate();
  ctx_spec.validate();
  clusters.validate(vocab_size, config.d_model);
  auto& self = const_cast<CaptionModel&>(*this);
  std::size_t D = config.d_model;
  if (params.token_embed.rank() != 2 || params.token_embed.rows() != vocab_size ||
      params.token_embed.cols() != D) {
    throw ValidationError("model: token embedding shape " + params.token_embed.shape_str());
  }
  if (params.pos_embed.rows() != config.max_positions || params.pos_embed.cols() != D) {
    throw ValidationError("model: positional embedding shape " + params.pos_embed.shape_str());
  }
  if (params.layer_mix_logits.size() != ctx_spec.n_layers) {
    throw ValidationError("model: layer mix weight count " +
                          std::to_string(params.layer_mix_logits.size()));
  }
  if (params.blocks.size() != config.n_blocks) {
    throw ValidationError("model: block count " + std::to_string(params.blocks.size()));
  }
  self.visit_params([](const std::string& name, Tensor& t) {
    t.ensure_finite("model parameter " + name);
  });
}

Var dynamic_conv(Tape& tape, std::span<const Var> window, std::size_t kernel_size,
                 ConvHeadParams& head, VarCache& cache, std::vector<double>* gamma_out) {
  if (window.size() != kernel_size) {
    throw ContractError("dynamic conv: window length " + std::to_string(window.size()) +
                        " != kernel size " + std::to_string(kernel_size));
  }
  Var wp = cache(head.w_proj);
  Var bp = cache(head.b_proj);
  Var wd = cache(head.w_dyn);
  std::vector<Var> projs, scores;
  projs.reserve(window.size());
  scores.reserve(window.size());
  for (Var z : window) {
    Var proj = tape.glu(tape.linear(z, wp, bp));
    projs.push_back(proj);
    scores.push_back(tape.dot(wd, proj));
  }
  Var gamma = tape.softmax(tape.concat(scores));
  if (gamma_out != nullptr) *gamma_out = tape.value(gamma).data();
  return tape.weighted_sum(projs, gamma);
}

Var conv_block_output(Tape& tape, Var z, std::span<const Var> head_outputs, BlockParams& block,
                      VarCache& cache) {
  if (head_outputs.size() != block.conv_heads.size()) {
    throw ContractError("conv block: " + std::to_string(head_outputs.size()) + " head outputs for " +
                        std::to_string(block.conv_heads.size()) + " heads");
  }
  Var cat = tape.concat(head_outputs);
  Var projected = tape.linear(cat, cache(block.conv_out_w), cache(block.conv_out_b));
  return tape.layer_norm(tape.add(z, projected), cache(block.conv_ln_gain),
                         cache(block.conv_ln_bias), kLayerNormEps);
}

DomainKV project_kv(Tape& tape, Var context, DomainAttnParams& params, VarCache& cache) {
  DomainKV kv;
  kv.rows = tape.value(context).rows();
  if (kv.rows == 0) return kv;
  kv.k.reserve(params.heads.size());
  kv.v.reserve(params.heads.size());
  for (AttnHeadParams& head : params.heads) {
    kv.k.push_back(tape.matmul_nt(context, cache(head.wk)));
    kv.v.push_back(tape.matmul_nt(context, cache(head.wv)));
  }
  return kv;
}

Var attend_with_kv(Tape& tape, Var d, const DomainKV& kv, DomainAttnParams& params,
                   const DecoderConfig& config, VarCache& cache, DecoderTrace* trace) {
  Var gain = cache(params.ln_gain);
  Var bias = cache(params.ln_bias);
  if (kv.rows == 0) {
    // Empty domain: the attended vector is zero, so only the residual path
    // survives the layer norm.
    return tape.layer_norm(d, gain, bias, kLayerNormEps);
  }
  double scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  std::vector<Var> head_outs;
  head_outs.reserve(params.heads.size());
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    Var q = tape.matvec(cache(params.heads[h].wq), d);
    Var scores = tape.matvec(kv.k[h], q);
    if (config.attention_scaling) scores = tape.scale(scores, scale);
    Var lambda = tape.softmax(scores);
    if (trace != nullptr) trace->attn_lambdas.push_back(tape.value(lambda).data());
    head_outs.push_back(tape.matvec_t(kv.v[h], lambda));
  }
  Var attended = tape.concat(head_outs);
  return tape.layer_norm(tape.add(d, attended), gain, bias, kLayerNormEps);
}

Var attend_domain(Tape& tape, Var d, Var context, DomainAttnParams& params,
                  const DecoderConfig& config, VarCache& cache, DecoderTrace* trace) {
  DomainKV kv = project_kv(tape, context, params, cache);
  return attend_with_kv(tape, d, kv, params, config, cache, trace);
}

Var fuse_contexts(Tape& tape, Var xi, Var xa, Var xf, Var xo, BlockParams& block,
                  VarCache& cache) {
  std::array<Var, kNumDomains> parts = {xi, xa, xf, xo};
  Var cat = tape.concat(parts);
  Var c1 = tape.linear(cat, cache(block.fuse_w1), cache(block.fuse_b1));
  Var c2 = tape.relu(tape.linear(c1, cache(block.fuse_w2), cache(block.fuse_b2)));
  Var residual = tape.add(c1, tape.linear(c2, cache(block.fuse_w3), cache(block.fuse_b3)));
  return tape.layer_norm(residual, cache(block.fuse_ln_gain), cache(block.fuse_ln_bias),
                         kLayerNormEps);
}

DecoderRun::DecoderRun(Tape& tape, CaptionModel& model, const ContextBundle& bundle,
                       std::size_t article_begin, std::size_t article_end, bool trainable,
                       DecoderTrace* trace)
    : tape_(tape), model_(model), cache_(tape, trainable), trace_(trace) {
  // The model is validated at its boundaries (init, checkpoint load, train
  // entry); per-run work only checks the bundle against the declared shapes.
  bundle.validate(model_.ctx_spec);

  Var article = mix_article_layers(tape_, bundle, cache_(model_.params.layer_mix_logits),
                                   article_begin, article_end);
  Var image = tape_.leaf(bundle.image);
  Var faces = tape_.leaf(bundle.faces);
  Var objects = tape_.leaf(bundle.objects);
  const std::array<Var, kNumDomains> contexts = {image, article, faces, objects};

  std::size_t L = model_.config.n_blocks;
  kv_.resize(L);
  conv_.resize(L);
  history_.resize(L + 1);
  Var zero_d = tape_.zeros({model_.config.d_model});
  for (std::size_t b = 0; b < L; ++b) {
    BlockParams& blk = model_.params.blocks[b];
    for (std::size_t dom = 0; dom < kNumDomains; ++dom) {
      kv_[b][dom] = project_kv(tape_, contexts[dom], blk.attn[dom], cache_);
    }
    conv_[b].resize(model_.config.n_heads);
    for (std::size_t h = 0; h < model_.config.n_heads; ++h) {
      ConvCache& cc = conv_[b][h];
      Var wp = cache_(blk.conv_heads[h].w_proj);
      Var bp = cache_(blk.conv_heads[h].b_proj);
      cc.pad_proj = tape_.glu(tape_.linear(zero_d, wp, bp));
      cc.pad_score = tape_.dot(cache_(blk.conv_heads[h].w_dyn), cc.pad_proj);
    }
  }
}

Var DecoderRun::step(int prev_token_id) {
  if (t_ >= model_.config.max_positions) {
    throw CapacityError("decoder: position " + std::to_string(t_) + " exceeds max_positions " +
                        std::to_string(model_.config.max_positions));
  }
  if (prev_token_id < 0 || static_cast<std::size_t>(prev_token_id) >= model_.vocab_size) {
    throw DomainError("decoder: token id " + std::to_string(prev_token_id) +
                      " outside vocabulary of " + std::to_string(model_.vocab_size));
  }
  Var z = tape_.add(tape_.row(cache_(model_.params.token_embed),
                              static_cast<std::size_t>(prev_token_id)),
                    tape_.row(cache_(model_.params.pos_embed), t_));
  history_[0].push_back(z);

  for (std::size_t b = 0; b < model_.config.n_blocks; ++b) {
    BlockParams& blk = model_.params.blocks[b];
    std::size_t K = model_.config.kernel_sizes[b];
    std::vector<Var> head_outs;
    head_outs.reserve(model_.config.n_heads);
    for (std::size_t h = 0; h < model_.config.n_heads; ++h) {
      ConvCache& cc = conv_[b][h];
      Var wp = cache_(blk.conv_heads[h].w_proj);
      Var bp = cache_(blk.conv_heads[h].b_proj);
      Var proj = tape_.glu(tape_.linear(z, wp, bp));
      cc.proj.push_back(proj);
      cc.score.push_back(tape_.dot(cache_(blk.conv_heads[h].w_dyn), proj));

      std::vector<Var> wproj, wscore;
      wproj.reserve(K);
      wscore.reserve(K);
      for (std::size_t j = 0; j < K; ++j) {
        // Window position t-K+1+j; negative positions use the zero-vector pad.
        std::int64_t pos = static_cast<std::int64_t>(t_) - static_cast<std::int64_t>(K) + 1 +
                           static_cast<std::int64_t>(j);
        if (pos < 0) {
          wproj.push_back(cc.pad_proj);
          wscore.push_back(cc.pad_score);
        } else {
          wproj.push_back(cc.proj[static_cast<std::size_t>(pos)]);
          wscore.push_back(cc.score[static_cast<std::size_t>(pos)]);
        }
      }
      Var gamma = tape_.softmax(tape_.concat(wscore));
      if (trace_ != nullptr) trace_->conv_gammas.push_back(tape_.value(gamma).data());
      head_outs.push_back(tape_.weighted_sum(wproj, gamma));
    }
    Var d = conv_block_output(tape_, z, head_outs, blk, cache_);
    std::array<Var, kNumDomains> attended;
    for (std::size_t dom = 0; dom < kNumDomains; ++dom) {
      attended[dom] = attend_with_kv(tape_, d, kv_[b][dom], blk.attn[dom], model_.config, cache_,
                                     trace_);
    }
    z = fuse_contexts(tape_, attended[0], attended[1], attended[2], attended[3], blk, cache_);
    history_[b + 1].push_back(z);
  }
  ++t_;
  return z;
}

Var DecoderRun::log_probs(Var hidden) {
  return adaptive_softmax::log_prob(tape_, hidden, model_.params.softmax, model_.clusters, cache_);
}

Var DecoderRun::nll(Var hidden, std::size_t target) {
  return adaptive_softmax::nll_loss(tape_, hidden, target, model_.params.softmax, model_.clusters,
                                    cache_);
}

SequenceLoss sequence_nll(Tape& tape, CaptionModel& model, const ContextBundle& bundle,
                          std::size_t article_begin, std::size_t article_end,
                          std::span<const int> caption_ids, bool trainable, DecoderTrace* trace) {
  DecoderRun run(tape, model, bundle, article_begin, article_end, trainable, trace);
  std::vector<int> inputs;
  std::vector<int> targets;
  inputs.reserve(caption_ids.size() + 1);
  targets.reserve(caption_ids.size() + 1);
  inputs.push_back(bpe::kBosId);
  for (int id : caption_ids) {
    inputs.push_back(id);
    targets.push_back(id);
  }
  targets.push_back(bpe::kEosId);

  SequenceLoss loss;
  loss.n_tokens = targets.size();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Var hidden = run.step(inputs[i]);
    Var nll = run.nll(hidden, static_cast<std::size_t>(targets[i]));
    loss.per_token.push_back(nll);
    loss.total = i == 0 ? nll : tape.add(loss.total, nll);
  }
  return loss;
}

std::vector<int> teacher_forced_argmax(CaptionModel& model, const ContextBundle& bundle,
                                       std::size_t article_begin, std::size_t article_end,
                                       std::span<const int> caption_ids) {
  Tape tape;
  DecoderRun run(tape, model, bundle, article_begin, article_end, /*trainable=*/false);
  std::vector<int> inputs;
  inputs.push_back(bpe::kBosId);
  for (int id : caption_ids) inputs.push_back(id);

  std::vector<int> predictions;
  predictions.reserve(inputs.size());
  for (int input : inputs) {
    Var hidden = run.step(input);
    const Tensor& lp = tape.value(run.log_probs(hidden));
    std::size_t best = 0;
    for (std::size_t i = 1; i < lp.size(); ++i) {
      if (lp[i] > lp[best]) best = i;
    }
    predictions.push_back(static_cast<int>(best));
  }
  return predictions;
}

}  // namespace newscap
