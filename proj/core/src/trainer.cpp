#include "newscap/trainer.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "json.hpp"
#include "newscap/bpe.hpp"
#include "newscap/rng.hpp"

namespace newscap {

void TrainConfig::validate() const {
  if (!(warmup_frac > 0.0) || !(warmup_frac < 1.0)) {
    throw ValidationError("train config: warmup_frac must lie in (0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train config: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0) || !(peak_lr > 0.0) || !(clip_norm > 0.0)) {
    throw ValidationError("train config: eps, peak_lr, and clip_norm must be positive");
  }
  if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be nonnegative");
  if (batch_size == 0 || total_steps == 0) {
    throw ValidationError("train config: batch_size and total_steps must be positive");
  }
}

OptimizerState OptimizerState::init(const std::vector<Tensor*>& params) {
  OptimizerState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.emplace_back(p->size(), 0.0);
    s.v.emplace_back(p->size(), 0.0);
  }
  return s;
}

double lr_at(std::size_t step, const TrainConfig& config) {
  config.validate();
  if (step > config.total_steps) {
    throw DomainError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                      std::to_string(config.total_steps));
  }
  double t = static_cast<double>(step);
  double total = static_cast<double>(config.total_steps);
  double warm_end = config.warmup_frac * total;
  if (t <= warm_end) return config.peak_lr * (t / warm_end);
  return config.peak_lr * ((total - t) / (total - warm_end));
}

double clip_global_norm(const std::vector<std::vector<double>*>& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw DomainError("clip: clip_norm must be positive");
  double sq = 0.0;
  for (const std::vector<double>* g : grads) {
    for (double v : *g) {
      if (!std::isfinite(v)) throw NumericError("clip: non-finite gradient");
      sq += v * v;
    }
  }
  double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    double scale = clip_norm / norm;
    for (std::vector<double>* g : grads) {
      for (double& v : *g) v *= scale;
    }
  }
  return norm;
}

double clip_global_norm(const std::vector<Tensor*>& params, double clip_norm) {
  std::vector<std::vector<double>*> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) grads.push_back(&p->grad());
  return clip_global_norm(grads, clip_norm);
}

void adam_update(const std::vector<Tensor*>& params, OptimizerState& state, double lr,
                 const TrainConfig& config) {
  if (params.size() != state.m.size()) {
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameters for " +
                         std::to_string(state.m.size()) + " moment buffers");
  }
  state.step += 1;
  double t = static_cast<double>(state.step);
  double bc1 = 1.0 - std::pow(config.beta1, t);
  double bc2 = 1.0 - std::pow(config.beta2, t);
  double step_size = lr * std::sqrt(bc2) / bc1;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const std::vector<double>& g = theta.grad();
    if (g.size() != theta.size()) {
      throw DimensionError("adam: gradient length " + std::to_string(g.size()) +
                           " vs parameter length " + std::to_string(theta.size()));
    }
    std::vector<double>& m = state.m[p];
    std::vector<double>& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      theta[i] -= step_size * m[i] / (std::sqrt(v[i]) + config.eps);
      theta[i] -= lr * config.weight_decay * theta[i];
    }
    theta.ensure_finite("adam parameter update");
  }
}

namespace {

void write_log_line(std::ostream& out, const StepLog& entry) {
  nlohmann::json line = {
      {"step", entry.step}, {"lr", entry.lr}, {"loss", entry.loss}, {"tokens", entry.tokens}};
  out << line.dump() << "\n";
}

// Per-example gradient buffers aligned with the parameter list so that
// accumulation order is example-index order regardless of threading.
struct ExampleGrads {
  std::vector<std::vector<double>> buffers;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
};

}  // namespace

double teacher_forced_accuracy(CaptionModel& model, std::vector<TrainExample>& dataset) {
  std::size_t hits = 0, total = 0;
  for (TrainExample& ex : dataset) {
    std::vector<int> pred = teacher_forced_argmax(model, ex.context, ex.article_begin,
                                                  ex.article_end, ex.caption_ids);
    std::vector<int> targets(ex.caption_ids.begin(), ex.caption_ids.end());
    targets.push_back(bpe::kEosId);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      hits += pred[i] == targets[i] ? 1 : 0;
    }
    total += targets.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double position_accuracy(CaptionModel& model, std::vector<TrainExample>& dataset,
                         std::size_t position) {
  std::size_t hits = 0, total = 0;
  for (TrainExample& ex : dataset) {
    if (position >= ex.caption_ids.size()) continue;
    std::vector<int> pred = teacher_forced_argmax(model, ex.context, ex.article_begin,
                                                  ex.article_end, ex.caption_ids);
    hits += pred[position] == ex.caption_ids[position] ? 1 : 0;
    total += 1;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

TrainResult train(std::vector<TrainExample>& dataset, CaptionModel& model,
                  const TrainConfig& config, std::ostream* log_out, double stop_accuracy,
                  std::size_t accuracy_check_every) {
  config.validate();
  model.validate();
  if (dataset.empty()) throw DomainError("train: empty dataset");

  std::vector<Tensor*> params = model.param_list();
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
    p->grad();  // allocate
  }
  OptimizerState opt = OptimizerState::init(params);

  std::size_t n_threads = config.n_threads > 0
                              ? config.n_threads
                              : std::max<std::size_t>(1, std::thread::hardware_concurrency());

  // Epoch order: a seeded shuffle per epoch; batches are consecutive slices,
  // with a shorter final batch when the dataset does not divide evenly.
  std::vector<std::size_t> order(dataset.size());
  std::size_t epoch = 0, cursor = 0;
  auto reshuffle = [&]() {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(config.seed * 0x9e3779b9u + epoch + 1);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
  };
  reshuffle();

  TrainResult result;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    if (cursor >= order.size()) {
      ++epoch;
      cursor = 0;
      reshuffle();
    }
    std::size_t batch_n = std::min(config.batch_size, order.size() - cursor);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + batch_n));
    cursor += batch_n;

    std::vector<ExampleGrads> grads(batch_n);
    for (ExampleGrads& g : grads) {
      g.buffers.reserve(params.size());
      for (Tensor* p : params) g.buffers.emplace_back(p->size(), 0.0);
    }

    auto run_example = [&](std::size_t slot) {
      TrainExample& ex = dataset[batch[slot]];
      ExampleGrads& out = grads[slot];
      std::unordered_map<const Tensor*, std::vector<double>*> sink_map;
      for (std::size_t p = 0; p < params.size(); ++p) sink_map[params[p]] = &out.buffers[p];
      Tape tape;
      tape.set_grad_sink([&sink_map](const Tensor* t) -> std::vector<double>* {
        auto it = sink_map.find(t);
        return it == sink_map.end() ? nullptr : it->second;
      });
      SequenceLoss loss = sequence_nll(tape, model, ex.context, ex.article_begin, ex.article_end,
                                       ex.caption_ids, /*trainable=*/true);
      tape.backward(loss.total);
      out.loss_sum = tape.value(loss.total)[0];
      out.tokens = loss.n_tokens;
    };

    if (n_threads <= 1 || batch_n <= 1) {
      for (std::size_t slot = 0; slot < batch_n; ++slot) run_example(slot);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> workers;
      std::size_t n_workers = std::min(n_threads, batch_n);
      workers.reserve(n_workers);
      for (std::size_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&]() {
          for (std::size_t slot = next.fetch_add(1); slot < batch_n; slot = next.fetch_add(1)) {
            run_example(slot);
          }
        });
      }
      for (std::thread& w : workers) w.join();
    }

    // Merge per-example gradients in index order, then scale to per-token mean.
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    for (Tensor* p : params) p->zero_grad();
    for (const ExampleGrads& g : grads) {
      loss_sum += g.loss_sum;
      token_sum += g.tokens;
      for (std::size_t p = 0; p < params.size(); ++p) {
        params[p]->accumulate_grad(g.buffers[p]);
      }
    }
    double inv_tokens = 1.0 / static_cast<double>(token_sum);
    for (Tensor* p : params) {
      for (double& v : p->grad()) v *= inv_tokens;
    }

    clip_global_norm(params, config.clip_norm);
    double lr = lr_at(step, config);
    adam_update(params, opt, lr, config);

    StepLog entry{step, lr, loss_sum * inv_tokens, token_sum};
    if (log_out != nullptr) write_log_line(*log_out, entry);
    result.log.push_back(entry);
    result.steps_run = step;

    if (stop_accuracy > 0.0 && (step % accuracy_check_every == 0 || step == config.total_steps)) {
      if (teacher_forced_accuracy(model, dataset) >= stop_accuracy) break;
    }
  }
  return result;
}

}  // namespace newscap
