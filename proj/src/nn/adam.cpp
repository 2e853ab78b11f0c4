#include "ove6d/nn/adam.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ove6d/error.hpp"

namespace ove6d::nn {

template <typename T>
void AdamW<T>::step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, double lr) {
  if (params.size() != grads.size()) throw InvalidArgument("adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw InvalidArgument("adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = *grads[k];
    if (p.size() != g.size() || p.size() != m_[k].size()) throw InvalidArgument("adam: state shape mismatch");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
      double x = p[i];
      x -= lr * cfg_.weight_decay * x;
      x -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      p[i] = static_cast<T>(x);
    }
  }
}

double cosine_lr(double epoch, double total_epochs, double lr_max, double lr_min) {
  if (total_epochs <= 0) return lr_max;
  const double e = std::clamp(epoch, 0.0, total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * e / total_epochs));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace ove6d::nn
