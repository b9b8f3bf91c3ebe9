#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "newscap/tensor.hpp"

namespace newscap {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until Tape::clear().
struct Var {
  std::uint32_t index = 0;
};

/// Reverse-mode autodiff tape. Every op computes its value eagerly, checks
/// the result for non-finite entries, and records how to push gradients back
/// to its parents. backward() replays the recorded ops exactly once each, in
/// reverse execution order.
///
/// Parameters are external Tensors bound with param(); their gradients are
/// flushed into the Tensor's own grad buffer (or into a caller-provided sink,
/// see set_grad_sink) at the end of backward(), in node-creation order.
class Tape {
 public:
  /// Resolves where a bound parameter's gradient should be accumulated.
  /// Returning nullptr falls back to the Tensor's own grad buffer.
  using GradSink = std::function<std::vector<double>*(const Tensor*)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  Var leaf(Tensor value);
  Var param(Tensor& tensor);
  Var zeros(std::vector<std::size_t> shape);

  // ---- elementwise / vector ops ----
  Var add(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  /// Gated linear unit over an even-length vector: out = a ⊙ sigmoid(b)
  /// where [a, b] are the two halves of the input.
  Var glu(Var a);
  /// Numerically stable softmax of a vector (max-subtraction).
  Var softmax(Var a);
  Var log_softmax(Var a);
  /// z-score normalization across the vector, then gain/bias. Population
  /// variance; eps added inside the square root.
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  Var concat(std::span<const Var> parts);
  Var slice(Var v, std::size_t offset, std::size_t length);
  /// Single element of a vector as a scalar (shape [1]) node.
  Var pick(Var v, std::size_t i);
  Var dot(Var a, Var b);
  /// Broadcast-add a scalar node to every element of a vector node.
  Var add_scalar(Var vec, Var scalar);
  Var sum(Var a);

  // ---- linear algebra ----
  /// y = W·x + b with W[m×n], x[n], b[m].
  Var linear(Var x, Var W, Var b);
  /// A[m×n]·x[n] -> [m]
  Var matvec(Var A, Var x);
  /// Aᵀ·y with A[m×n], y[m] -> [n]
  Var matvec_t(Var A, Var y);
  /// A[m×k]·Bᵀ with B[n×k] -> [m×n]
  Var matmul_nt(Var A, Var B);
  /// Row r of a matrix node as a vector (embedding lookup).
  Var row(Var M, std::size_t r);
  /// Σ_ℓ alpha[ℓ]·layers[ℓ] for constant, same-shape layer matrices.
  /// Gradient flows into alpha only.
  Var mix_layers(Var alpha, const std::vector<Tensor>& layers);
  /// out = Σ_j weights[j] · values[j] over equal-length vectors.
  Var weighted_sum(std::span<const Var> values, Var weights);

  // ---- execution ----
  /// Backpropagate from a scalar node. Seeds its gradient with 1.
  void backward(Var loss);

  /// Node value. The reference is invalidated by the next recorded op;
  /// copy it when ops will follow.
  const Tensor& value(Var v) const { return nodes_[v.index].value; }
  /// Gradient of a node after backward(); empty if no gradient reached it.
  std::span<const double> grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes visited by the last backward() sweep.
  std::size_t last_backward_visits() const { return last_visits_; }

  void set_grad_sink(GradSink sink) { sink_ = std::move(sink); }
  /// Drops all nodes; keeps capacity for reuse.
  void clear();

 private:
  using BackFn = std::function<void(Tape&, std::uint32_t)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;     // lazily sized by backward
    bool needs_grad = false;
    Tensor* bound = nullptr;      // non-null for param nodes
    BackFn back;                  // empty for leaves
  };

  Var push(Tensor value, bool needs_grad, BackFn back);
  std::vector<double>& grad_buf(std::uint32_t i);
  void add_grad(std::uint32_t i, std::span<const double> g);
  void add_grad_at(std::uint32_t i, std::size_t offset, double g);
  bool needs(Var v) const { return nodes_[v.index].needs_grad; }
  const Tensor& val(std::uint32_t i) const { return nodes_[i].value; }

  std::vector<Node> nodes_;
  GradSink sink_;
  std::size_t last_visits_ = 0;
};

/// Max over coordinates of the relative error between the tape gradient of
/// f at x and a central finite difference with step h. The denominator is
/// max(1, |analytic|, |numeric|), so near-zero gradients are compared
/// absolutely. f must build a scalar node; h must lie in (0, 1e-2].
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5);

/// Binds external parameter tensors onto a tape at most once each. In
/// trainable mode tensors become param nodes (gradients flow back to them);
/// otherwise they are plain leaves and backward closures are skipped.
class VarCache {
 public:
  VarCache(Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  Var operator()(Tensor& t) {
    auto it = map_.find(&t);
    if (it != map_.end()) return it->second;
    Var v = trainable_ ? tape_->param(t) : tape_->leaf(t);
    map_.emplace(&t, v);
    return v;
  }

  bool trainable() const { return trainable_; }
  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> map_;
};

}  // namespace newscap
