#pragma once

#include <vector>

#include "ove6d/nn/tensor.hpp"

namespace ove6d::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled: each step shrinks parameters by lr * weight_decay before the Adam update.
  double weight_decay = 1e-5;
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates params[i] in place from grads[i]. Moment buffers are created on the first call;
  /// later calls must pass the same parameter shapes in the same order.
  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, double lr);

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// lr(e) = lr_min + (lr_max - lr_min) (1 + cos(pi e / total)) / 2; e is clamped to [0, total].
double cosine_lr(double epoch, double total_epochs, double lr_max = 1e-3, double lr_min = 1e-5);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace ove6d::nn
