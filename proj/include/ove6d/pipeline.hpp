#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "ove6d/codebook.hpp"
#include "ove6d/geometry.hpp"
#include "ove6d/kdtree.hpp"
#include "ove6d/model.hpp"
#include "ove6d/render.hpp"

namespace ove6d {

enum class IcpMode { Off, AfterSelection, BeforeSelection };

std::string icp_mode_name(IcpMode m);
IcpMode icp_mode_from_name(const std::string& name);

struct EstimateConfig {
  /// Codebook size used when a codebook is built for this run.
  int n_views = 4000;
  int k_retrieval = 50;
  int p_proposals = 5;
  IcpMode icp = IcpMode::AfterSelection;
  double f_base = 5.0;
  /// Rendered pixels with no observed depth count as outliers in the quality score.
  bool unobserved_as_outlier = true;
  /// Tilt the retrieved rotation by the camera ray through t_init (off-axis objects).
  bool ray_correction = true;
  double crop_scale = 1.5;
  int icp_max_iters = 30;
  double icp_tol_mm = 1e-3;
  int icp_max_points = 5000;

  /// Throws ConfigError unless 1 <= p <= k <= n.
  void validate() const;
  nlohmann::json to_json() const;
  static EstimateConfig from_json(const nlohmann::json& j);
};

struct PoseHypothesis {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double verify_score = 0;
  /// Outlier ratio in [0, 1].
  double quality_q = 1;
  bool degenerate = false;
  /// Position in the retrieval list and the codebook record it came from.
  int source_rank = 0;
  int record = 0;
  double inplane_deg = 0;
  bool icp_applied = false;
  double icp_rms = 0;

  Pose pose() const { return {rotation, translation}; }
};

struct StageTimings {
  double preprocess_ms = 0, encode_ms = 0, retrieve_ms = 0, candidates_ms = 0, refine_ms = 0, quality_ms = 0,
         icp_ms = 0, total_ms = 0;
  nlohmann::json to_json() const;
};

struct EstimateResult {
  PoseHypothesis best;
  /// The P scored proposals, in verify-score order.
  std::vector<PoseHypothesis> hypotheses;
  Vec3 t_init = Vec3::Zero();
  StageTimings timings;

  nlohmann::json to_json(const std::string& object_id) const;
};

/// The full cascade for one masked object.
EstimateResult estimate_pose(const Network<float>& net, const CodebookRegistry::Entry& object, const DepthFrame& depth,
                             const MaskFrame& mask, const EstimateConfig& cfg);
EstimateResult estimate_pose(const Network<float>& net, const CodebookRegistry& registry, const std::string& object_id,
                             const DepthFrame& depth, const MaskFrame& mask, const EstimateConfig& cfg);

/// Index of the hypothesis with the lowest q; ties go to the higher verify score, then the lower rank.
int select_hypothesis(const std::vector<PoseHypothesis>& hyps);

/// Rotation taking the optical axis onto the ray through t (identity on axis).
Rotation ray_rotation(const Vec3& t);

/// 2 t_init - t_syn, where t_syn is the preprocess center estimate on a render at [r_est | t_init].
Vec3 refine_location(const TriangleMesh& mesh, const Rotation& r_est, const Vec3& t_init, const CameraIntrinsics& intr);

struct QualityResult {
  double q = 1;
  int pixels = 0;
  int outliers = 0;
  /// No rendered pixels: q is 1.
  bool degenerate = false;
};

/// Fraction of the rendered object's pixels whose depth differs from `observed` by more than 0.1 d.
QualityResult hypothesis_quality(const TriangleMesh& mesh, const Pose& pose, const DepthFrame& observed,
                                 double diameter, bool unobserved_as_outlier = true);

struct IcpResult {
  Pose pose;
  /// RMS of the closest-point residuals before the first and after every update.
  std::vector<double> rms_history;
  double rms = 0;
  int iterations = 0;
  /// Degenerate input: the initial pose is returned unchanged.
  bool skipped = false;
};

/// Point-to-point ICP aligning model points (object frame) to scene points (camera frame).
IcpResult icp_refine(const std::vector<Vec3>& model_points, const std::vector<Vec3>& scene_points, const Pose& init,
                     int max_iters = 30, double tol_mm = 1e-3);
/// Same, with a prebuilt tree over the model points.
IcpResult icp_refine(const KdTree& model, const std::vector<Vec3>& scene_points, const Pose& init, int max_iters = 30,
                     double tol_mm = 1e-3);

/// Least-squares rigid transform with R a_i + t ~ b_i.
Pose kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// z K^-1 [u, v, 1] for every masked pixel with valid depth; throws NoObjectError when none.
std::vector<Vec3> mask_to_points(const DepthFrame& depth, const MaskFrame& mask);

/// Evenly strided subset of at most max_points points.
std::vector<Vec3> subsample_points(const std::vector<Vec3>& points, int max_points);

/// Depth with everything outside the mask zeroed.
DepthFrame apply_mask(const DepthFrame& depth, const MaskFrame& mask);

}  // namespace ove6d
