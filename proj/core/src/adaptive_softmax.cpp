#include "newscap/adaptive_softmax.hpp"

#include <cmath>

namespace newscap {

namespace {

Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor m({rows, cols});
  double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
  m.set_requires_grad(true);
  return m;
}

}  // namespace

ClusterSpec ClusterSpec::single(std::size_t vocab_size) {
  ClusterSpec s;
  s.cutoffs = {vocab_size};
  return s;
}

ClusterSpec ClusterSpec::with_cutoffs(std::vector<std::size_t> cutoffs) {
  ClusterSpec s;
  s.cutoffs = std::move(cutoffs);
  std::size_t div = 1;
  for (std::size_t c = 1; c < s.cutoffs.size(); ++c) {
    div *= 4;
    s.tail_divisors.push_back(div);
  }
  return s;
}

ClusterSpec ClusterSpec::full_scale() { return with_cutoffs({5000, 15000, 30000}); }

std::size_t ClusterSpec::vocab_size() const {
  std::size_t n = 0;
  for (std::size_t c : cutoffs) n += c;
  return n;
}

std::size_t ClusterSpec::cluster_offset(std::size_t c) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < c; ++i) off += cutoffs[i];
  return off;
}

std::size_t ClusterSpec::cluster_of(std::size_t token) const {
  std::size_t off = 0;
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    off += cutoffs[c];
    if (token < off) return c;
  }
  throw DomainError("adaptive softmax: token id " + std::to_string(token) +
                    " outside vocabulary of " + std::to_string(off));
}

void ClusterSpec::validate(std::size_t vocab, std::size_t d_model) const {
  if (cutoffs.empty()) throw ValidationError("adaptive softmax: no clusters");
  for (std::size_t c : cutoffs) {
    if (c < 1) throw ValidationError("adaptive softmax: cluster sizes must be positive");
  }
  if (vocab_size() != vocab) {
    throw ValidationError("adaptive softmax: cluster sizes sum to " +
                          std::to_string(vocab_size()) + ", vocabulary has " +
                          std::to_string(vocab));
  }
  if (tail_divisors.size() != n_tails()) {
    throw ValidationError("adaptive softmax: " + std::to_string(tail_divisors.size()) +
                          " divisors for " + std::to_string(n_tails()) + " tail clusters");
  }
  for (std::size_t d : tail_divisors) {
    if (d < 1 || d_model / d < 1) {
      throw ValidationError("adaptive softmax: tail divisor " + std::to_string(d) +
                            " leaves no hidden units at d_model " + std::to_string(d_model));
    }
  }
}

AdaptiveSoftmaxParams AdaptiveSoftmaxParams::init(std::size_t d_model, const ClusterSpec& spec,
                                                  Rng& rng) {
  AdaptiveSoftmaxParams p;
  p.head = init_matrix(spec.cutoffs[0] + spec.n_tails(), d_model, rng);
  for (std::size_t c = 0; c < spec.n_tails(); ++c) {
    std::size_t hidden = d_model / spec.tail_divisors[c];
    p.tail_down.push_back(init_matrix(hidden, d_model, rng));
    p.tail_out.push_back(init_matrix(spec.cutoffs[c + 1], hidden, rng));
  }
  return p;
}

void AdaptiveSoftmaxParams::visit(const std::string& prefix,
                                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".head", head);
  for (std::size_t c = 0; c < tail_down.size(); ++c) {
    fn(prefix + ".tail" + std::to_string(c) + ".down", tail_down[c]);
    fn(prefix + ".tail" + std::to_string(c) + ".out", tail_out[c]);
  }
}

namespace adaptive_softmax {

Var log_prob(Tape& tape, Var h, AdaptiveSoftmaxParams& params, const ClusterSpec& spec,
             VarCache& cache) {
  std::size_t first = spec.cutoffs[0];
  Var head_logits = tape.matvec(cache(params.head), h);
  Var head_lsm = tape.log_softmax(head_logits);
  if (spec.n_tails() == 0) return head_lsm;

  std::vector<Var> parts;
  parts.reserve(1 + spec.n_tails());
  parts.push_back(tape.slice(head_lsm, 0, first));
  for (std::size_t c = 0; c < spec.n_tails(); ++c) {
    Var hidden = tape.matvec(cache(params.tail_down[c]), h);
    Var tail_lsm = tape.log_softmax(tape.matvec(cache(params.tail_out[c]), hidden));
    parts.push_back(tape.add_scalar(tail_lsm, tape.pick(head_lsm, first + c)));
  }
  return tape.concat(parts);
}

Var nll_loss(Tape& tape, Var h, std::size_t target, AdaptiveSoftmaxParams& params,
             const ClusterSpec& spec, VarCache& cache) {
  if (target >= spec.vocab_size()) {
    throw DomainError("adaptive softmax: target id " + std::to_string(target) +
                      " outside vocabulary of " + std::to_string(spec.vocab_size()));
  }
  std::size_t first = spec.cutoffs[0];
  Var head_logits = tape.matvec(cache(params.head), h);
  Var head_lsm = tape.log_softmax(head_logits);
  if (target < first) {
    return tape.scale(tape.pick(head_lsm, target), -1.0);
  }
  std::size_t cluster = spec.cluster_of(target);
  std::size_t tail = cluster - 1;
  std::size_t local = target - spec.cluster_offset(cluster);
  Var hidden = tape.matvec(cache(params.tail_down[tail]), h);
  Var tail_lsm = tape.log_softmax(tape.matvec(cache(params.tail_out[tail]), hidden));
  Var logp = tape.add(tape.pick(head_lsm, first + tail), tape.pick(tail_lsm, local));
  return tape.scale(logp, -1.0);
}

}  // namespace adaptive_softmax
}  // namespace newscap
