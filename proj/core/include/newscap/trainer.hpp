#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "newscap/decoder.hpp"

namespace newscap {

/// Optimization recipe: Adam (beta1 0.9, beta2 0.98, eps 1e-6) with
/// decoupled weight decay 1e-5, learning rate warmed up linearly to 1e-4
/// over the first 5% of steps and decayed linearly to zero afterwards,
/// global gradient-norm clipping at 0.1.
struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double peak_lr = 1e-4;
  double warmup_frac = 0.05;
  double weight_decay = 1e-5;
  double clip_norm = 0.1;
  std::size_t batch_size = 16;
  std::size_t total_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t n_threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

/// Per-parameter Adam moments plus the shared step counter.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  static OptimizerState init(const std::vector<Tensor*>& params);
};

/// Learning rate at optimizer step t in [0, total_steps]: linear 0 -> peak
/// over the warmup, then linear peak -> 0 at total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

/// Scales every gradient by clip_norm/norm when the global L2 norm exceeds
/// clip_norm. Returns the pre-clip norm. Throws NumericError on non-finite
/// gradients.
double clip_global_norm(const std::vector<std::vector<double>*>& grads, double clip_norm);
/// Convenience overload over parameter tensors' grad buffers.
double clip_global_norm(const std::vector<Tensor*>& params, double clip_norm);

/// One bias-corrected Adam step (epsilon applied to the uncorrected second
/// moment, i.e. update = lr * sqrt(1-beta2^t)/(1-beta1^t) * m/(sqrt(v)+eps)),
/// followed by the decoupled decay theta -= lr * weight_decay * theta.
void adam_update(const std::vector<Tensor*>& params, OptimizerState& state, double lr,
                 const TrainConfig& config);

/// One teacher-forced example: caption token ids plus its context bundle and
/// the selected article window.
struct TrainExample {
  std::vector<int> caption_ids;
  ContextBundle context;
  std::size_t article_begin = 0;
  std::size_t article_end = 0;
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;     // mean NLL per token over the batch
  std::size_t tokens = 0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::size_t steps_run = 0;
};

/// Teacher-forced training loop: per-token-averaged NLL over each batch,
/// gradients accumulated in example-index order, clipped, then one Adam
/// step. Deterministic for a fixed seed regardless of thread count. Emits
/// one JSON line per step ({"step","lr","loss","tokens"}) to log_out when
/// given. stop_accuracy, when positive, ends training early once the
/// teacher-forced token accuracy over the dataset reaches it (checked every
/// accuracy_check_every steps).
TrainResult train(std::vector<TrainExample>& dataset, CaptionModel& model,
                  const TrainConfig& config, std::ostream* log_out = nullptr,
                  double stop_accuracy = 0.0, std::size_t accuracy_check_every = 50);

/// Fraction of teacher-forced positions (caption tokens plus EOS) where the
/// argmax next-token prediction matches the target.
double teacher_forced_accuracy(CaptionModel& model, std::vector<TrainExample>& dataset);

/// Accuracy restricted to one caption position (0-based), for probing what
/// a single slot learned.
double position_accuracy(CaptionModel& model, std::vector<TrainExample>& dataset,
                         std::size_t position);

}  // namespace newscap
