#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ove6d/nn/tape.hpp"

namespace ove6d::nn {

template <typename T>
using Id = typename Tape<T>::Id;

/// Batch-norm running statistics for one layer.
template <typename T>
struct BatchNormState {
  const Tensor<T>* running_mean = nullptr;
  const Tensor<T>* running_var = nullptr;
  /// Train mode writes the batch mean and unbiased variance here; the caller folds them into the
  /// running statistics so that parallel shards update them in a fixed order.
  std::vector<double>* batch_mean = nullptr;
  std::vector<double>* batch_var = nullptr;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// NCHW cross-correlation with a KxK kernel (K odd), zero padding K/2; output size ceil(in/stride).
/// `bias` may be -1 for none.
template <typename T>
int conv2d(Tape<T>& tape, int x, int weight, int bias, int stride);

/// Per-channel normalization over (N, H, W), then gamma * xhat + beta.
template <typename T>
int batch_norm(Tape<T>& tape, int x, int gamma, int beta, const BatchNormState<T>& state, bool train);

template <typename T>
int relu(Tape<T>& tape, int x);

/// 2x2 window, stride 2.
template <typename T>
int max_pool2d(Tape<T>& tape, int x);

/// NCHW -> NC.
template <typename T>
int global_avg_pool(Tape<T>& tape, int x);

/// x: [N, F], weight: [O, F], bias: [O] -> [N, O].
template <typename T>
int fully_connected(Tape<T>& tape, int x, int weight, int bias);

/// NCHW -> [N, C*H*W].
template <typename T>
int flatten(Tape<T>& tape, int x);

template <typename T>
int add(Tape<T>& tape, int a, int b);

/// Elementwise sum of weighted same-shape tensors.
template <typename T>
int linear_combination(Tape<T>& tape, const std::vector<std::pair<int, double>>& terms);

/// Scalar (shape [1]) sum of all elements times `scale`.
template <typename T>
int sum_all(Tape<T>& tape, int x, double scale = 1.0);

/// Row-wise L2 normalization of [N, F].
template <typename T>
int l2_normalize_rows(Tape<T>& tape, int x);

/// Row-wise cosine similarity of two [N, F] tensors -> [N]. Zero rows throw InvalidArgument.
template <typename T>
int cosine_rows(Tape<T>& tape, int a, int b);

/// max(x + margin, 0), elementwise.
template <typename T>
int hinge(Tape<T>& tape, int x, double margin);

/// -log((1 + s) / 2), elementwise.
template <typename T>
int neg_log_half_cos(Tape<T>& tape, int s);

template <typename T>
int concat_channels(Tape<T>& tape, int a, int b);

template <typename T>
int concat_batch(Tape<T>& tape, const std::vector<int>& parts);

template <typename T>
int slice_batch(Tape<T>& tape, int x, int begin, int count);

/// Rotates every channel of a square NCHW map about its center by the in-plane rotation whose
/// first column is u[n] = (cos, sin), using bilinear sampling with zero outside the map:
/// out(p) = in(c + R(u)^T (p - c)). Gradients flow to both x and u.
template <typename T>
int spatial_transform(Tape<T>& tape, int x, int u);

/// Kaiming-uniform initialization bound for a layer with the given fan-in.
double kaiming_uniform_bound(int fan_in);

/// a.b / (|a||b|); zero vectors throw InvalidArgument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace ove6d::nn
