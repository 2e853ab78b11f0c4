#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <vector>

#include "ove6d/datagen.hpp"
#include "ove6d/model.hpp"

namespace ove6d {

struct TrainConfig {
  int epochs = 5;
  int steps_per_epoch = 60;
  int objects_per_batch = 8;
  int anchors_per_object = 16;
  /// Anchors per object in one gradient shard; a shard mixes every object of the batch.
  int shard_anchors = 2;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 1e-5;
  /// Probability that v_theta / v_gamma of a triplet are augmented; the anchor stays clean.
  double augment_fraction = 0.5;
  double f_base = 5.0;
  AugmentConfig augment;
  NetworkConfig network;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainObject {
  TriangleMesh mesh;
  double diameter = 0;
};

struct StepLog {
  int step = 0;
  double epoch = 0;
  double lr = 0;
  /// Per-triplet means.
  double loss = 0, viewpoint = 0, verification = 0, inplane = 0;
  double ranking_accuracy = 0;
  double seconds = 0;
};

struct TrainResult {
  Network<float> net;
  std::vector<StepLog> steps;
};

/// Network-ready crops of one triplet.
struct PreparedTriplet {
  std::vector<float> v, v_theta, v_gamma, v_depth;
  double theta_rad = 0;
};

/// Preprocesses the three renders; v_theta and v_gamma are augmented when `augment` is set.
PreparedTriplet prepare_triplet(const TrainingTriplet& t, double diameter, int size, bool augment,
                                const AugmentConfig& aug, std::uint64_t seed);

TripletBatch<float> make_batch(const std::vector<const PreparedTriplet*>& items, int size);

/// Minimizes the combined loss. `progress` is called after every step. Throws NumericalError on
/// a non-finite loss.
TrainResult train(const std::vector<TrainObject>& objects, const TrainConfig& cfg,
                  const std::function<void(const StepLog&)>& progress = {});

/// Metrics on freshly sampled, noise-free triplets.
struct HeldOutReport {
  int triplets = 0;
  /// Pr[S(v, v_theta) > S(v, v_gamma)].
  double ranking_accuracy = 0;
  /// |predicted - true| in-plane angle of (v, v_theta) pairs, degrees.
  std::vector<double> inplane_errors;
  double inplane_median = 0;
  /// Pr[score(v aligned, v_theta) > score(v aligned, v_gamma)].
  double verify_accuracy = 0;
};

HeldOutReport evaluate_held_out(const Network<float>& net, const std::vector<TrainObject>& objects, int anchors,
                                std::uint64_t seed, double gamma_min_deg = 15.0, double f_base = 5.0);

/// Signed difference a - b wrapped to (-180, 180], degrees.
double wrap_degrees(double a);

}  // namespace ove6d
