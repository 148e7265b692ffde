#pragma once

// Adafactor with factored second moments, decay c_t = 1 - t^-0.8 and RMS
// update clipping at threshold d = 1. No first moment, no relative-step
// sizing: the learning rate is supplied by the caller (lr_schedule).

#include <cmath>
#include <string>
#include <vector>

#include "tpt/model.hpp"
#include "tpt/tensor.hpp"

namespace tpt {

/// Square-root decay held flat through warmup: lr(t) = scale / sqrt(max(t, w)).
inline double lr_schedule(long long step, long long warmup, double scale = 1.0) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  return scale / std::sqrt(static_cast<double>(std::max(step, warmup)));
}

template <class T>
class AdafactorT {
 public:
  struct Slot {
    TensorT<T> row, col;  // factored accumulators for >= 2-d parameters
    TensorT<T> full;      // dense accumulator for 1-d parameters
  };

  explicit AdafactorT(ParameterStore<T>& params, double clip_threshold = 1.0,
                      double eps1 = 1e-30)
      : params_(params), clip_(clip_threshold), eps1_(static_cast<T>(eps1)) {
    for (auto& [name, t] : params_.items()) {
      Slot s;
      if (t.ndim() >= 2) {
        const int rows = t.dim(0);
        const int cols = static_cast<int>(t.numel()) / rows;
        s.row = TensorT<T>::zeros({rows});
        s.col = TensorT<T>::zeros({cols});
      } else {
        s.full = TensorT<T>::zeros(t.shape());
      }
      slots_.push_back(std::move(s));
    }
  }

  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }

  /// One update over every parameter. Gradients are validated first; a
  /// non-finite gradient aborts before any state is touched, naming the
  /// offending parameter. Parameter gradients are cleared afterwards.
  void step(double lr) {
    auto& items = params_.items();
    for (auto& [name, t] : items) {
      if (!t.has_grad()) continue;
      for (const T& g : t.grad())
        if (!std::isfinite(g))
          throw std::runtime_error("adafactor: non-finite gradient in parameter '" + name + "'");
    }
    ++t_;
    const T decay = static_cast<T>(1.0 - std::pow(static_cast<double>(t_), -0.8));
    for (std::size_t idx = 0; idx < items.size(); ++idx) {
      auto& tensor = items[idx].second;
      Slot& slot = slots_[idx];
      const std::size_t n = tensor.numel();
      const std::vector<T>* gptr = nullptr;
      std::vector<T> zeros;
      if (tensor.has_grad()) {
        gptr = &tensor.grad();
      } else {
        zeros.assign(n, T(0));
        gptr = &zeros;
      }
      const std::vector<T>& g = *gptr;
      update_.assign(n, T(0));
      if (tensor.ndim() >= 2) {
        const int rows = tensor.dim(0);
        const int cols = static_cast<int>(n) / rows;
        auto& r = slot.row.data();
        auto& c = slot.col.data();
        for (int i = 0; i < rows; ++i) {
          T sum = 0;
          for (int j = 0; j < cols; ++j) {
            const T g2 = g[i * cols + j] * g[i * cols + j] + eps1_;
            sum += g2;
          }
          r[i] = decay * r[i] + (T(1) - decay) * sum;
        }
        for (int j = 0; j < cols; ++j) {
          T sum = 0;
          for (int i = 0; i < rows; ++i) sum += g[i * cols + j] * g[i * cols + j] + eps1_;
          c[j] = decay * c[j] + (T(1) - decay) * sum;
        }
        T row_total = 0;
        for (int i = 0; i < rows; ++i) row_total += r[i];
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) {
            const T vhat = r[i] * c[j] / row_total;
            update_[i * cols + j] = g[i * cols + j] / std::sqrt(vhat);
          }
      } else {
        auto& v = slot.full.data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = decay * v[i] + (T(1) - decay) * (g[i] * g[i] + eps1_);
          update_[i] = g[i] / std::sqrt(v[i]);
        }
      }
      T ms = 0;
      for (std::size_t i = 0; i < n; ++i) ms += update_[i] * update_[i];
      const T rms = std::sqrt(ms / n);
      const T denom = std::max(T(1), rms / static_cast<T>(clip_));
      const T step_size = static_cast<T>(lr) / denom;
      auto& data = tensor.data();
      for (std::size_t i = 0; i < n; ++i) data[i] -= step_size * update_[i];
      tensor.zero_grad();
    }
  }

  /// Accumulator tensors in a stable order, for checkpointing.
  std::vector<std::pair<std::string, TensorT<T>>> state_tensors() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string& name = items[i].first;
      if (slots_[i].full.defined()) {
        out.emplace_back(name + "/full", slots_[i].full);
      } else {
        out.emplace_back(name + "/row", slots_[i].row);
        out.emplace_back(name + "/col", slots_[i].col);
      }
    }
    return out;
  }

  void restore_state(const std::vector<std::pair<std::string, TensorT<T>>>& tensors,
                     long long step_count) {
    auto expected = state_tensors();
    if (tensors.size() != expected.size())
      throw std::runtime_error("adafactor: optimizer state entry count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].first != expected[i].first)
        throw std::runtime_error("adafactor: optimizer state name mismatch at '" +
                                 tensors[i].first + "'");
      if (tensors[i].second.shape() != expected[i].second.shape())
        throw std::runtime_error("adafactor: optimizer state shape mismatch at '" +
                                 tensors[i].first + "'");
      expected[i].second.data() = tensors[i].second.data();
    }
    t_ = step_count;
  }

 private:
  ParameterStore<T>& params_;
  std::vector<Slot> slots_;
  std::vector<T> update_;
  double clip_;
  T eps1_;
  long long t_ = 0;
};

using Adafactor = AdafactorT<float>;

}  // namespace tpt
