#pragma once

// Teacher-forced cross-entropy training. One logical stream: batches are
// drawn from the example pool with the trainer's counter-based rng, so a
// checkpoint resume continues the exact same data and dropout streams.

#include <cstdint>
#include <utility>
#include <vector>

#include "tpt/adafactor.hpp"
#include "tpt/checkpoint.hpp"
#include "tpt/config.hpp"
#include "tpt/model.hpp"
#include "tpt/tensor.hpp"

namespace tpt {

/// One encoded example: EOS-terminated source and target id sequences.
struct EncodedExample {
  std::vector<int> source;
  std::vector<int> target;
};

namespace detail {

inline std::vector<int> strip_padding(const std::vector<int>& ids) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == kPadId) --n;
  return std::vector<int>(ids.begin(), ids.begin() + n);
}

}  // namespace detail

template <class T>
class Trainer {
 public:
  Trainer(ModelT<T>& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), rng_(cfg_.seed), optimizer_(model.parameters()) {
    cfg_.validate();
  }

  ModelT<T>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }
  AdafactorT<T>& optimizer() { return optimizer_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  /// Loss over a batch: sum of per-token cross entropy divided by
  /// `normalizer` (the batch's own non-pad target token count by
  /// default). Trailing padding is stripped before the forward pass,
  /// which both excludes it from the loss and keeps it out of attention.
  TensorT<T> batch_loss(const std::vector<EncodedExample>& batch, bool training,
                        long long normalizer = 0) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    long long total_tokens = 0;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> trimmed;
    trimmed.reserve(batch.size());
    for (const auto& ex : batch) {
      auto src = detail::strip_padding(ex.source);
      auto tgt = detail::strip_padding(ex.target);
      if (src.empty()) throw std::invalid_argument("train_step: empty source sequence");
      if (tgt.empty()) throw std::invalid_argument("train_step: all-pad target sequence");
      total_tokens += static_cast<long long>(tgt.size());
      trimmed.emplace_back(std::move(src), std::move(tgt));
    }
    if (normalizer == 0) normalizer = total_tokens;
    TensorT<T> acc;
    for (const auto& [src, tgt] : trimmed) {
      std::vector<int> dec_in;
      dec_in.reserve(tgt.size());
      dec_in.push_back(kBosId);
      dec_in.insert(dec_in.end(), tgt.begin(), tgt.end() - 1);
      auto logits = model_.forward_logits(src, dec_in, training, training ? &rng_ : nullptr);
      auto ce = cross_entropy_mean(logits, tgt, cfg_.label_smoothing);
      auto weighted = scale(ce, static_cast<T>(tgt.size()));
      acc = acc.defined() ? add(acc, weighted) : weighted;
    }
    return scale(acc, static_cast<T>(1.0 / normalizer));
  }

  /// Forward + backward (+ gradient accumulation over sub-batches) and
  /// one optimizer update. Returns the batch loss. Each chunk's loss is
  /// normalized by the whole-batch token count, so accumulated gradients
  /// are exactly the whole-batch gradient.
  double train_step(const std::vector<EncodedExample>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    long long total_tokens = 0;
    for (const auto& ex : batch) {
      const auto tgt = detail::strip_padding(ex.target);
      if (tgt.empty()) throw std::invalid_argument("train_step: all-pad target sequence");
      total_tokens += static_cast<long long>(tgt.size());
    }
    const int chunks = std::min<int>(cfg_.grad_accum, static_cast<int>(batch.size()));
    const std::size_t per = (batch.size() + chunks - 1) / chunks;
    double loss_value = 0;
    for (std::size_t lo = 0; lo < batch.size(); lo += per) {
      const std::size_t hi = std::min(batch.size(), lo + per);
      std::vector<EncodedExample> chunk(batch.begin() + lo, batch.begin() + hi);
      auto loss = batch_loss(chunk, /*training=*/true, total_tokens);
      loss_value += static_cast<double>(loss.value());
      backward(loss);
    }
    ++step_;
    optimizer_.step(lr_schedule(static_cast<long long>(step_), cfg_.warmup_steps, cfg_.lr_scale));
    return loss_value;
  }

  /// Draws a batch from the pool with the trainer rng (uniform with
  /// replacement), so the data stream is a pure function of the rng state.
  std::vector<EncodedExample> sample_batch(const std::vector<EncodedExample>& pool) {
    if (pool.empty()) throw std::invalid_argument("sample_batch: empty example pool");
    std::vector<EncodedExample> batch;
    batch.reserve(cfg_.batch_size);
    for (int i = 0; i < cfg_.batch_size; ++i)
      batch.push_back(pool[rng_.uniform_int(pool.size())]);
    return batch;
  }

 private:
  ModelT<T>& model_;
  TrainConfig cfg_;
  Rng rng_;
  AdafactorT<T> optimizer_;
  std::uint64_t step_ = 0;
};

/// Puts a freshly constructed trainer back into the state a checkpoint
/// was saved in: step counter, optimizer accumulators and the exact rng
/// position, so data order and dropout masks continue unchanged.
template <class T>
void restore_trainer(Trainer<T>& trainer, const CheckpointData<T>& ck) {
  trainer.rng().restore(ck.rng_seed, ck.rng_counter);
  if (ck.has_optimizer)
    trainer.optimizer().restore_state(ck.optimizer_tensors,
                                      static_cast<long long>(ck.optimizer_step));
  trainer.set_step(ck.step);
}

/// Runs up to max_steps training steps; the callback sees (step, loss)
/// after each one and can stop early by returning false.
template <class T, class Callback>
std::vector<double> run_training(Trainer<T>& trainer, const std::vector<EncodedExample>& pool,
                                 int max_steps, Callback&& cb) {
  std::vector<double> losses;
  losses.reserve(max_steps);
  for (int s = 0; s < max_steps; ++s) {
    auto batch = trainer.sample_batch(pool);
    const double loss = trainer.train_step(batch);
    losses.push_back(loss);
    if (!cb(trainer.step(), loss)) break;
  }
  return losses;
}

}  // namespace tpt
