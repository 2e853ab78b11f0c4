#include "ove6d/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ove6d/error.hpp"
#include "ove6d/nn/tape.hpp"

namespace ove6d::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (count(shape_) != data_.size())
    throw InvalidArgument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(std::vector<int> shape) const {
  if (count(shape) != data_.size())
    throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::check_finite(const char* op) const {
  for (const T& v : data_)
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
}

template <typename T>
Tensor<T> slice_leading(const Tensor<T>& t, int begin, int count) {
  if (t.rank() == 0 || begin < 0 || count < 0 || begin + count > t.dim(0))
    throw InvalidArgument("slice out of range for " + shape_string(t.shape()));
  std::vector<int> shape = t.shape();
  const std::size_t per = t.size() / static_cast<std::size_t>(std::max(1, shape[0]));
  shape[0] = count;
  return Tensor<T>(shape, std::vector<T>(t.data() + begin * per, t.data() + (begin + count) * per));
}

template <typename T>
Tensor<T> stack_leading(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw InvalidArgument("stack of zero tensors");
  std::vector<int> shape = parts[0]->shape();
  if (shape.empty()) throw InvalidArgument("stack of scalars");
  std::vector<T> data;
  shape[0] = 0;
  for (const auto* p : parts) {
    if (p->rank() != static_cast<int>(shape.size()) || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1))
      throw InvalidArgument("stack: trailing shape mismatch");
    shape[0] += p->dim(0);
    data.insert(data.end(), p->storage().begin(), p->storage().end());
  }
  return Tensor<T>(shape, std::move(data));
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Id id) {
  return grad_mut(id);
}

template <typename T>
Tensor<T>& Tape<T>::grad_mut(Id id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, Id)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && record_;
  if (n.needs_grad) n.backward = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
void Tape<T>::backward(Id target) {
  if (!record_) throw InvalidArgument("backward on a non-recording tape");
  if (value(target).size() != 1) throw InvalidArgument("backward target must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_mut(target)[0] = T(1);
  for (Id i = target; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> slice_leading(const Tensor<float>&, int, int);
template Tensor<double> slice_leading(const Tensor<double>&, int, int);
template Tensor<float> stack_leading(const std::vector<const Tensor<float>*>&);
template Tensor<double> stack_leading(const std::vector<const Tensor<double>*>&);

}  // namespace ove6d::nn
