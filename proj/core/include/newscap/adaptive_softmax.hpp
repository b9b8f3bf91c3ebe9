#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "newscap/rng.hpp"
#include "newscap/tape.hpp"

namespace newscap {

/// Frequency-based output clusters. cutoffs are cluster sizes (head first),
/// summing to the vocabulary size; low token ids are expected to be the
/// frequent ones. Each tail cluster projects the hidden state down by its
/// divisor before the output matrix, 4^k for the k-th tail by default.
struct ClusterSpec {
  std::vector<std::size_t> cutoffs;
  std::vector<std::size_t> tail_divisors;

  static ClusterSpec single(std::size_t vocab_size);
  /// cutoffs with default divisors 4, 16, 64, ...
  static ClusterSpec with_cutoffs(std::vector<std::size_t> cutoffs);
  /// The published 50K-vocabulary clustering: 5K head, 15K and 30K tails.
  static ClusterSpec full_scale();

  std::size_t vocab_size() const;
  std::size_t n_tails() const { return cutoffs.empty() ? 0 : cutoffs.size() - 1; }
  /// First token id of cluster c (0 = head).
  std::size_t cluster_offset(std::size_t c) const;
  /// Cluster index for a token id.
  std::size_t cluster_of(std::size_t token) const;

  void validate(std::size_t vocab, std::size_t d_model) const;
};

/// Head projection emits first-cluster logits plus one logit per tail
/// cluster; each tail has a down-projection and an output matrix. No biases.
struct AdaptiveSoftmaxParams {
  Tensor head;                    // (cutoffs[0] + n_tails) x d_model
  std::vector<Tensor> tail_down;  // (d_model / divisor) x d_model
  std::vector<Tensor> tail_out;   // cutoffs[c] x (d_model / divisor)

  static AdaptiveSoftmaxParams init(std::size_t d_model, const ClusterSpec& spec, Rng& rng);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor&)>& fn);
};

namespace adaptive_softmax {

/// Full log-distribution over the vocabulary; exp of it sums to 1. Tail
/// token log-probabilities factorize as log p(cluster|h) + log p(token|cluster,h).
Var log_prob(Tape& tape, Var h, AdaptiveSoftmaxParams& params, const ClusterSpec& spec,
             VarCache& cache);

/// -log p(target | h), evaluating only the head plus the target's cluster.
Var nll_loss(Tape& tape, Var h, std::size_t target, AdaptiveSoftmaxParams& params,
             const ClusterSpec& spec, VarCache& cache);

}  // namespace adaptive_softmax
}  // namespace newscap
