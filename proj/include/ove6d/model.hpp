#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ove6d/geometry.hpp"
#include "ove6d/nn/checkpoint.hpp"
#include "ove6d/nn/ops.hpp"
#include "ove6d/render.hpp"

namespace ove6d {

/// Layer plan of the shared backbone and the three heads.
struct NetworkConfig {
  int input_size = 128;
  std::vector<int> channels{16, 32, 32, 64, 64, 128, 128, 128};
  std::vector<int> strides{2, 1, 2, 1, 2, 1, 2, 1};
  int embedding_dim = 64;
  int ove_channels = 128;
  int ior_channels = 64;
  int ior_hidden = 128;
  int ocv_channels = 64;

  /// Throws ConfigError for inconsistent plans.
  void validate() const;
  /// Spatial side of the backbone output.
  int feature_size() const;
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

/// Parameters and batch-norm running statistics of the network, stored in a fixed order.
template <typename T>
class Network {
 public:
  struct BatchNormLayer {
    std::string name;
    nn::Tensor<T> running_mean, running_var;
  };

  /// Kaiming-uniform conv/FC weights, zero biases, unit BN scale.
  explicit Network(NetworkConfig cfg = {}, std::uint64_t seed = 0);

  const NetworkConfig& config() const { return cfg_; }
  std::size_t parameter_count() const;
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::vector<nn::Tensor<T>*> parameters();
  const nn::Tensor<T>& parameter(std::size_t i) const { return values_[i]; }
  nn::Tensor<T>& parameter(const std::string& name);
  std::size_t parameter_index(const std::string& name) const;

  std::vector<BatchNormLayer>& batch_norms() { return bn_; }
  const std::vector<BatchNormLayer>& batch_norms() const { return bn_; }
  std::size_t batch_norm_index(const std::string& name) const;
  /// running = (1 - momentum) running + momentum batch, per channel.
  void update_running_stats(std::size_t layer, const std::vector<double>& mean, const std::vector<double>& var);

  std::vector<nn::CheckpointRecord> to_records() const;
  static Network from_records(const std::vector<nn::CheckpointRecord>& records);

  template <typename U>
  Network<U> cast() const {
    Network<U> out(cfg_, 0);
    for (std::size_t i = 0; i < values_.size(); ++i) *out.parameters()[i] = values_[i].template cast<U>();
    for (std::size_t i = 0; i < bn_.size(); ++i) {
      out.batch_norms()[i].running_mean = bn_[i].running_mean.template cast<U>();
      out.batch_norms()[i].running_var = bn_[i].running_var.template cast<U>();
    }
    return out;
  }

 private:
  void add_param(const std::string& name, std::vector<int> shape);
  void add_conv(const std::string& name, int cin, int cout);
  void add_bn(const std::string& name, int c);
  void add_fc(const std::string& name, int in, int out);

  NetworkConfig cfg_;
  std::vector<std::string> names_;
  std::vector<nn::Tensor<T>> values_;
  std::map<std::string, std::size_t> index_;
  std::vector<BatchNormLayer> bn_;
};

/// One forward graph over a tape: parameters are pushed as variables (train) or constants (eval).
/// Train mode normalizes with batch statistics and records them for the caller to fold in.
template <typename T>
class Pass {
 public:
  Pass(const Network<T>& net, nn::Tape<T>& tape, bool train);
  /// Uses existing tape nodes as the parameters (ordered like Network::parameters()).
  Pass(const Network<T>& net, nn::Tape<T>& tape, bool train, std::vector<int> parameter_ids);

  nn::Tape<T>& tape() { return tape_; }
  bool train() const { return train_; }
  int param(const std::string& name) const { return ids_.at(net_.parameter_index(name)); }
  const std::vector<int>& parameter_ids() const { return ids_; }

  /// [N, 1, S, S] -> [N, C, s, s]
  int backbone(int x);
  /// Feature map -> [N, D] unit rows.
  int embed(int feat);
  /// (reference, observed) feature maps -> [N, 2] unit rows (cos, sin) of the rotation taking the
  /// reference image to the observed one.
  int inplane(int feat_ref, int feat_obs);
  /// (in-plane-aligned reference, observed) feature maps -> [N, 1] consistency scores.
  int verify(int feat_ref_aligned, int feat_obs);

  /// Batch statistics recorded in train mode, indexed like Network::batch_norms(); layers not
  /// evaluated by this pass hold empty vectors.
  const std::vector<std::vector<double>>& batch_means() const { return batch_mean_; }
  const std::vector<std::vector<double>>& batch_vars() const { return batch_var_; }

 private:
  int conv_bn_relu(const std::string& name, int x, int stride, int residual);

  const Network<T>& net_;
  nn::Tape<T>& tape_;
  bool train_;
  std::vector<int> ids_;
  std::vector<std::vector<double>> batch_mean_, batch_var_;
};

inline constexpr double kViewpointMargin = 0.1;
inline constexpr double kVerificationMargin = 0.1;
inline constexpr double kViewpointWeight = 100.0;
inline constexpr double kVerificationWeight = 10.0;
inline constexpr double kInplaneWeight = 1.0;

/// max(S(v, v_gamma) - S(v, v_theta) + margin, 0) with S the cosine similarity.
double viewpoint_loss(std::span<const float> v, std::span<const float> v_theta, std::span<const float> v_gamma,
                      double margin = kViewpointMargin);
/// max(s_gamma - s_theta + margin, 0).
double verification_loss(double s_theta, double s_gamma, double margin = kVerificationMargin);
/// Depth minus the mean depth of the object pixels, zero off the object. Raw depth at codebook
/// distance is close to a binary silhouette, which cannot tell an in-plane angle from its 180
/// degree flip; the relief can. A relief that vanishes (a plane facing the camera) falls back to
/// the silhouette.
std::vector<float> depth_relief(std::span<const float> depth);
/// -log((1 + S) / 2) between the depth relief rotated in-plane by r_pred and by r_gt.
double inplane_loss(const DepthFrame& v, const Rotation& r_pred, const Rotation& r_gt);

struct LossTerms {
  double viewpoint = 0, verification = 0, inplane = 0;
};
/// Mean over the batch of 100 vp + 10 css + 1 theta.
double combined_loss(const std::vector<LossTerms>& batch);

/// Network-ready tensors for a set of triplets; all image tensors are [B, 1, S, S].
template <typename T>
struct TripletBatch {
  nn::Tensor<T> v, v_theta, v_gamma;
  /// depth_relief of the anchor crop; target of the in-plane loss.
  nn::Tensor<T> v_depth;
  /// [B, 2] ground-truth (cos, sin) of the in-plane rotation from v to v_theta.
  nn::Tensor<T> theta;
};

struct LossSums {
  double total = 0, viewpoint = 0, verification = 0, inplane = 0;
  /// Triplets whose viewpoint ranking S(v, v_theta) > S(v, v_gamma) holds.
  int ranked = 0;
};

/// Builds `scale` * sum over the batch of the weighted losses and returns its tape id; the
/// unscaled per-term sums go to `sums`.
template <typename T>
int build_training_loss(Pass<T>& pass, const TripletBatch<T>& batch, double scale, LossSums* sums);

/// Eval-mode inference outputs for a stack of crops.
struct Encoded {
  nn::Tensor<float> embeddings;  ///< [N, D], unit rows
  nn::Tensor<float> features;    ///< [N, C, s, s]
};

/// crops: [N, 1, S, S]; processed in chunks of `chunk` images.
Encoded encode(const Network<float>& net, const nn::Tensor<float>& crops, int chunk = 64);
/// Unit (cos, sin) per row. Raw head output with norm below 1e-8 throws NumericalError.
std::vector<Vec2> regress_inplane(const Network<float>& net, const nn::Tensor<float>& feat_ref,
                                  const nn::Tensor<float>& feat_obs);
/// Consistency score of T_theta(feat_ref) against feat_obs, per row.
std::vector<double> verify_score(const Network<float>& net, const nn::Tensor<float>& feat_ref,
                                 const nn::Tensor<float>& feat_obs, const std::vector<Vec2>& theta);

void save_network(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_network(const std::filesystem::path& path);

extern template class Network<float>;
extern template class Network<double>;
extern template class Pass<float>;
extern template class Pass<double>;

}  // namespace ove6d
