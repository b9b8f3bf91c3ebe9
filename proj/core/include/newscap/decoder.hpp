#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "newscap/adaptive_softmax.hpp"
#include "newscap/context.hpp"
#include "newscap/tape.hpp"

namespace newscap {

/// Decoder hyperparameters. Full scale follows the published recipe
/// (hidden size 1024, 16 heads, 4 blocks with kernels 3/7/15/31); the
/// defaults here are the desk-scale test configuration.
struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::vector<std::size_t> kernel_sizes = {3, 7};
  /// Scale attention scores by 1/sqrt(d_model/n_heads) before the softmax.
  /// Off reproduces the bare dot-product form.
  bool attention_scaling = true;
  std::size_t max_positions = 64;

  static DecoderConfig full_scale();
  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
};

enum class Domain : std::size_t { image = 0, article = 1, faces = 2, objects = 3 };
inline constexpr std::size_t kNumDomains = 4;
const char* domain_name(Domain d);

/// One attention head's projections: query from the decoder state, key and
/// value from the context rows.
struct AttnHeadParams {
  Tensor wq;  // head_dim x d_model
  Tensor wk;  // head_dim x d_domain
  Tensor wv;  // head_dim x d_domain
};

struct DomainAttnParams {
  std::vector<AttnHeadParams> heads;
  Tensor ln_gain, ln_bias;  // d_model
};

/// One head of the dynamic convolution: GLU projection of each window
/// position plus the dynamic weight vector that scores it.
struct ConvHeadParams {
  Tensor w_proj;  // 2*head_dim x d_model
  Tensor b_proj;  // 2*head_dim
  Tensor w_dyn;   // head_dim
};

struct BlockParams {
  std::vector<ConvHeadParams> conv_heads;
  Tensor conv_out_w, conv_out_b;      // d_model x d_model, d_model
  Tensor conv_ln_gain, conv_ln_bias;  // d_model
  std::array<DomainAttnParams, kNumDomains> attn;
  Tensor fuse_w1, fuse_b1;            // d_model x 4*d_model
  Tensor fuse_w2, fuse_b2;            // d_model x d_model
  Tensor fuse_w3, fuse_b3;            // d_model x d_model
  Tensor fuse_ln_gain, fuse_ln_bias;  // d_model
};

struct DecoderParams {
  Tensor token_embed;      // vocab x d_model
  Tensor pos_embed;        // max_positions x d_model
  Tensor layer_mix_logits; // n_layers
  std::vector<BlockParams> blocks;
  AdaptiveSoftmaxParams softmax;
};

/// Everything needed to run the caption decoder.
struct CaptionModel {
  DecoderConfig config;
  ContextSpec ctx_spec;
  ClusterSpec clusters;
  std::size_t vocab_size = 0;
  DecoderParams params;

  static CaptionModel init(const DecoderConfig& config, const ContextSpec& ctx_spec,
                           const ClusterSpec& clusters, std::size_t vocab_size,
                           std::uint64_t seed);

  /// Visits every learnable tensor in a fixed, documented order.
  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
  std::vector<Tensor*> param_list();
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::size_t param_count();

  void validate() const;
};

/// Optional capture of the internal attention distributions, for tests.
struct DecoderTrace {
  std::vector<std::vector<double>> conv_gammas;   // one entry per (step, block, head)
  std::vector<std::vector<double>> attn_lambdas;  // per (step, block, domain, head) with M >= 1
};

// ---- block-level operations (also used by DecoderRun) ----

/// Dynamic convolution for one head (kernel window ending at the current
/// step). window must hold exactly kernel_size hidden-state vars, left-padded
/// with zero vectors by the caller when fewer steps exist.
Var dynamic_conv(Tape& tape, std::span<const Var> window, std::size_t kernel_size,
                 ConvHeadParams& head, VarCache& cache,
                 std::vector<double>* gamma_out = nullptr);

/// Residual + layer norm over the concatenated head outputs.
Var conv_block_output(Tape& tape, Var z, std::span<const Var> head_outputs, BlockParams& block,
                      VarCache& cache);

/// Per-head projected context rows. k[h] and v[h] are M x head_dim.
struct DomainKV {
  std::vector<Var> k, v;
  std::size_t rows = 0;
};
DomainKV project_kv(Tape& tape, Var context, DomainAttnParams& params, VarCache& cache);

/// Multi-head attention of the decoder state over one context domain,
/// with residual and layer norm. An empty domain (M == 0) attends to
/// nothing: the attended vector is zero and the output is LayerNorm(d).
Var attend_with_kv(Tape& tape, Var d, const DomainKV& kv, DomainAttnParams& params,
                   const DecoderConfig& config, VarCache& cache, DecoderTrace* trace = nullptr);
Var attend_domain(Tape& tape, Var d, Var context, DomainAttnParams& params,
                  const DecoderConfig& config, VarCache& cache, DecoderTrace* trace = nullptr);

/// Fusion feedforward over the four attended vectors (image, article,
/// faces, objects order), producing the next block input.
Var fuse_contexts(Tape& tape, Var xi, Var xa, Var xf, Var xo, BlockParams& block, VarCache& cache);

/// Incremental decoder execution over one example: binds the context bundle
/// (article window given as a row range), precomputes per-domain keys and
/// values once, then steps token by token. Gradients flow back into the
/// model parameters when trainable.
class DecoderRun {
 public:
  DecoderRun(Tape& tape, CaptionModel& model, const ContextBundle& bundle,
             std::size_t article_begin, std::size_t article_end, bool trainable,
             DecoderTrace* trace = nullptr);

  /// Consumes the previous token and returns the final block's hidden state
  /// for the current position. Throws CapacityError at max_positions.
  Var step(int prev_token_id);

  Var log_probs(Var hidden);
  Var nll(Var hidden, std::size_t target);

  std::size_t position() const { return t_; }
  /// Hidden-state history per block level; history[l].size() equals the
  /// number of steps consumed.
  const std::vector<std::vector<Var>>& history() const { return history_; }

 private:
  struct ConvCache {
    std::vector<Var> proj;    // z' per past step
    std::vector<Var> score;   // scalar score per past step
    Var pad_proj;             // GLU projection of the zero vector
    Var pad_score;
  };

  Tape& tape_;
  CaptionModel& model_;
  VarCache cache_;
  DecoderTrace* trace_;
  std::size_t t_ = 0;
  std::vector<std::array<DomainKV, kNumDomains>> kv_;  // [block][domain]
  std::vector<std::vector<ConvCache>> conv_;           // [block][head]
  std::vector<std::vector<Var>> history_;              // [block level][step]
};

/// Teacher-forced negative log-likelihood of a caption. caption_ids are
/// content token ids; the model consumes [BOS, caption...] and is scored on
/// [caption..., EOS].
struct SequenceLoss {
  Var total;                  // sum of per-token NLL
  std::size_t n_tokens = 0;   // caption length + 1 (EOS)
  std::vector<Var> per_token;
};
SequenceLoss sequence_nll(Tape& tape, CaptionModel& model, const ContextBundle& bundle,
                          std::size_t article_begin, std::size_t article_end,
                          std::span<const int> caption_ids, bool trainable,
                          DecoderTrace* trace = nullptr);

/// Argmax next-token prediction at every teacher-forced position
/// (caption positions then EOS). Value-only, no gradients.
std::vector<int> teacher_forced_argmax(CaptionModel& model, const ContextBundle& bundle,
                                       std::size_t article_begin, std::size_t article_end,
                                       std::span<const int> caption_ids);

}  // namespace newscap
