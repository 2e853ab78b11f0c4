#pragma once

#include <functional>
#include <vector>

#include "ove6d/nn/tensor.hpp"

namespace ove6d::nn {

/// Reverse-mode gradient tape over the fixed operation set in ops.hpp. Each op appends a node
/// with its value and, when recording, a closure that propagates the node's gradient to its
/// inputs. A non-recording tape is used for inference and keeps values only.
template <typename T>
class Tape {
 public:
  using Id = int;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Id constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Id variable(Tensor<T> value) { return push(std::move(value), record_, {}); }

  const Tensor<T>& value(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool needs_grad(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

  /// Gradient of the last backward() target with respect to node `id` (zeros if unreached).
  const Tensor<T>& grad(Id id);
  /// Accumulation target used by op closures; allocated on first touch.
  Tensor<T>& grad_mut(Id id);

  /// Seeds d(target)/d(target) = 1 (target must hold one element) and runs every closure in
  /// reverse order.
  void backward(Id target);

  /// Appends a node. `backward_fn` runs only when the node itself needs a gradient.
  Id push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, Id)> backward_fn);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Id)> backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ove6d::nn
