#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ove6d::nn {

/// Dense row-major array. f32 is the storage type for parameters and activations; the same code
/// is instantiated for f64, which the gradient checks use.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<int> shape, std::vector<T> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// Same data, new shape of identical element count.
  Tensor reshaped(std::vector<int> shape) const;
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  /// Throws NumericalError naming `op` when any element is NaN or infinite.
  void check_finite(const char* op) const;

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<int>& shape);

/// Items [begin, begin + count) along the leading axis.
template <typename T>
Tensor<T> slice_leading(const Tensor<T>& t, int begin, int count);

/// Concatenation along the leading axis; trailing shapes must agree.
template <typename T>
Tensor<T> stack_leading(const std::vector<const Tensor<T>*>& parts);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ove6d::nn
