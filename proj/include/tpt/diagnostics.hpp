#pragma once

// Whole-model gradient checking: analytic gradients from one backward
// pass against central differences over every parameter coordinate.

#include <string>
#include <vector>

#include "tpt/model.hpp"
#include "tpt/tensor.hpp"

namespace tpt {

struct GradCheckReport {
  double max_error = 0.0;
  std::string worst_parameter;
  long long coordinates = 0;
};

/// Central-difference check of d(loss)/d(theta) for every learnable
/// scalar, where loss is the teacher-forced cross entropy of one
/// example. Runs in eval mode (no dropout), meant for 64-bit models.
template <class T>
GradCheckReport model_grad_check(ModelT<T>& model, const std::vector<int>& src_ids,
                                 const std::vector<int>& dec_in, const std::vector<int>& gold,
                                 T h) {
  auto loss_fn = [&] {
    return cross_entropy_mean(model.forward_logits(src_ids, dec_in), gold);
  };
  model.zero_grads();
  auto loss = loss_fn();
  backward(loss);
  GradCheckReport report;
  for (auto& [name, t] : model.parameters().items()) {
    const std::vector<T> analytic = t.has_grad() ? t.grad() : std::vector<T>(t.numel(), T(0));
    NoGradGuard ng;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const T saved = t.data()[i];
      t.data()[i] = saved + h;
      const T up = loss_fn().value();
      t.data()[i] = saved - h;
      const T down = loss_fn().value();
      t.data()[i] = saved;
      const T numeric = (up - down) / (2 * h);
      const double denom =
          std::max(1e-8, std::fabs(static_cast<double>(analytic[i])) +
                             std::fabs(static_cast<double>(numeric)));
      const double err = std::fabs(static_cast<double>(analytic[i] - numeric)) / denom;
      ++report.coordinates;
      if (err > report.max_error) {
        report.max_error = err;
        report.worst_parameter = name;
      }
    }
  }
  model.zero_grads();
  return report;
}

}  // namespace tpt
