#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "ove6d/codebook.hpp"
#include "ove6d/geometry.hpp"
#include "ove6d/pipeline.hpp"
#include "ove6d/render.hpp"

namespace ove6d {

/// Mean distance between matching model points under the two poses.
double add_error(const std::vector<Vec3>& model_points, const Pose& gt, const Pose& est);
/// Mean distance from each estimated point to the closest ground-truth point (KD-tree).
double adds_error(const std::vector<Vec3>& model_points, const Pose& gt, const Pose& est);

struct EvalRecord {
  std::string object_id;
  Pose pose_gt, pose_est;
  double diameter = 0;
  /// ADD-S instead of ADD.
  bool symmetric = false;
  double error = 0;
};

/// Fills record.error with ADD or ADD-S.
void score_record(EvalRecord& r, const std::vector<Vec3>& model_points);
/// Fraction of records with error < threshold_frac * diameter; throws InvalidArgument on an empty set.
double add_recall(const std::vector<EvalRecord>& records, double threshold_frac = 0.1);

inline constexpr double kVsdTau = 20.0;
inline constexpr double kVsdDelta = 15.0;
inline constexpr double kVsdThreshold = 0.3;

/// Visible surface discrepancy. Both renders get the same visibility test against the scene
/// (rendered depth at most delta behind the scene, or the scene unobserved); pixels in exactly
/// one visibility mask or differing by more than tau cost 1. Throws InvalidArgument when the
/// union is empty.
double vsd_error(const DepthFrame& scene, const TriangleMesh& mesh, const Pose& gt, const Pose& est,
                 double tau = kVsdTau, double delta = kVsdDelta);
double vsd_recall(const std::vector<double>& errors, double e_max = kVsdThreshold);

/// One synthetic test frame: noise-free depth of a single object and its mask.
struct EvalScene {
  std::string object_id;
  DepthFrame depth;
  MaskFrame mask;
  Pose pose_gt;
};

/// 640x480 intrinsics of the evaluation scenes.
CameraIntrinsics eval_intrinsics();

/// Uniform rotation, object center projected into the central half of the image at a distance
/// of 4 to 8 diameters.
EvalScene make_eval_scene(const TriangleMesh& mesh, double diameter, std::uint64_t seed,
                          const CameraIntrinsics& intr = eval_intrinsics());

/// Removes about `fraction` of the mask (and its depth) with a half-plane entering from a random
/// direction.
void occlude(EvalScene& scene, double fraction, std::uint64_t seed);

/// Angle between the optical axes of the two rotations in the object frame, degrees.
double viewpoint_error_deg(const Rotation& est, const Rotation& gt);
/// In-plane angle difference after factoring out each rotation's viewpoint, degrees.
double inplane_error_deg(const Rotation& est, const Rotation& gt);

struct SceneResult {
  std::string object_id;
  double add = 0;
  double diameter = 0;
  bool symmetric = false;
  double viewpoint_deg = 0, inplane_deg = 0;
  double translation_mm = 0, t_init_mm = 0;
  double q = 0;
  double total_ms = 0;
  bool failed = false;
  Pose pose_est;
};

/// Runs the cascade on every scene (failures count as misses).
std::vector<SceneResult> evaluate_scenes(const Network<float>& net, const CodebookRegistry& registry,
                                         const std::vector<EvalScene>& scenes, const EstimateConfig& cfg);
double recall_of(const std::vector<SceneResult>& results, double threshold_frac = 0.1);

struct AblationSweep {
  std::vector<int> n{1000, 4000};
  std::vector<int> k{1, 50};
  std::vector<int> p{1, 5};
};

struct AblationRow {
  std::string parameter;
  int n = 0, k = 0, p = 0;
  double recall = 0;
  double mean_ms = 0;
};

struct PrecisionCurve {
  std::string quantity;
  std::vector<double> thresholds;
  std::vector<double> precision;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  /// Per-scene results of the base configuration.
  std::vector<SceneResult> base;
  std::vector<PrecisionCurve> curves;

  double recall(const std::string& parameter, int value) const;
  std::string table() const;
  void write_csv(const std::filesystem::path& dir) const;
};

/// Recall against each swept parameter with the other two at the base configuration. The N sweep
/// reads one registry per codebook size.
AblationReport ablation_harness(const Network<float>& net, const std::map<int, const CodebookRegistry*>& by_n,
                                const std::vector<EvalScene>& scenes, const AblationSweep& sweep,
                                const EstimateConfig& base);

std::vector<PrecisionCurve> precision_curves(const std::vector<SceneResult>& results);

}  // namespace ove6d
