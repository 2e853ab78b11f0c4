#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "ove6d/geometry.hpp"
#include "ove6d/render.hpp"
#include "ove6d/rng.hpp"

namespace ove6d {

enum class ShapeFamily { Box, Cylinder, Ellipsoid, Superellipsoid, Union };

std::string family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);
/// Single primitives have rotational symmetries, so their poses are scored with ADD-S.
bool family_is_symmetric(ShapeFamily f);

/// A convex primitive in its own frame: semi-axes plus superellipsoid exponents.
struct Primitive {
  ShapeFamily family = ShapeFamily::Ellipsoid;
  Vec3 semi_axes = Vec3::Ones();
  double e1 = 1, e2 = 1;
  /// Pose of the primitive inside the object (identity for the main primitive).
  Mat3 rotation = Mat3::Identity();
  Vec3 offset = Vec3::Zero();

  /// Distance from the origin to the surface along unit direction d (origin inside).
  double radius(const Vec3& d) const;
  bool contains(const Vec3& p) const;
};

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::Box;
  Primitive main;
  /// Second primitive of a union; its interior contains the origin.
  Primitive extra;
  double diameter = 100;
  std::uint64_t seed = 0;
  std::string object_id;

  nlohmann::json to_json() const;
};

/// Radial-mesh resolution: a cube-sphere grid with this many cells along each face edge.
inline constexpr int kShapeGridCells = 24;

/// Uniform direction on the unit sphere.
Vec3 random_unit(CounterRng& rng);
/// Uniform rotation (normalized Gaussian quaternion).
Rotation random_rotation(CounterRng& rng);

/// Random spec of the given family with diameter drawn from [60, 280] mm.
ShapeSpec random_shape_spec(ShapeFamily family, std::uint64_t seed, const std::string& object_id);

/// Star-shaped radial mesh of the spec, centered on its bounding box and scaled to spec.diameter.
TriangleMesh generate_shape(const ShapeSpec& spec, int grid_cells = kShapeGridCells);

/// Families cycle through the five kinds; per-shape seeds derive from `seed`.
std::vector<ShapeSpec> generate_shape_specs(int count, std::uint64_t seed);
std::vector<TriangleMesh> generate_shapes(int count, std::uint64_t seed);

struct TrainingTriplet {
  DepthFrame v, v_theta, v_gamma;
  Rotation anchor;
  /// In-plane rotation taking v to v_theta.
  Rotation theta_gt;
  double theta_deg = 0;
  /// Rotation of the v_gamma render.
  Rotation gamma_rotation;
  /// Angle between the view directions of v and v_gamma.
  double gamma_angle = 0;
};

inline constexpr double kGammaMinDeg = 10.0;
inline constexpr double kGammaMaxDeg = 90.0;

/// `anchors` triplets of codebook-geometry renders: a random anchor viewpoint, the anchor turned
/// in-plane by theta ~ U[0, 360), and the anchor tilted by gamma ~ U[gamma_min, gamma_max] about
/// a random image-plane axis followed by a random in-plane turn.
std::vector<TrainingTriplet> sample_triplets(const TriangleMesh& mesh, double diameter, int anchors,
                                             std::uint64_t seed, double f_base = 5.0,
                                             double gamma_min_deg = kGammaMinDeg,
                                             double gamma_max_deg = kGammaMaxDeg);

struct Range {
  double lo = 0, hi = 0;
  double draw(CounterRng& rng) const { return rng.uniform(lo, hi); }
};

struct AugmentConfig {
  Range rescale_ratio{0.2, 0.8};
  /// Deviation in normalized depth units; multiplied by noise_scale_mm.
  Range laplace_dev{0.0, 0.01};
  /// Fraction of the image area zeroed by one rectangle.
  Range cutout_ratio{0.01, 0.1};
  Range gaussian_blur_sigma{0.0, 1.5};
  double occlusion_prob = 0.2;
  /// Occluder area as a fraction of the object's bounding-box area.
  Range occlusion_area{0.1, 0.4};
  /// Millimeters per normalized depth unit (the object diameter).
  double noise_scale_mm = 1.0;

  /// Throws ConfigError when a range leaves its documented envelope.
  void validate() const;
  /// Every stage off except the resample.
  static AugmentConfig resample_only(double ratio);
  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);
};

/// Parameters drawn by one augment() call.
struct AugmentTrace {
  double rescale_ratio = 1, laplace_dev = 0, blur_sigma = 0;
  int cutout_w = 0, cutout_h = 0;
  bool occluded = false;
};

/// Downscale, then Laplace noise, cutout, blur and occlusion on the small image, then upscale.
/// Resampling averages valid pixels only, and pixels that were zero in the input stay zero.
DepthFrame augment(const DepthFrame& frame, const AugmentConfig& cfg, std::uint64_t seed,
                   AugmentTrace* trace = nullptr);

/// Shape list with seeds and splits, as written by `gen-data`.
struct ManifestEntry {
  std::string object_id;
  std::string mesh_path;
  ShapeFamily family = ShapeFamily::Box;
  double diameter = 0;
  std::uint64_t seed = 0;
  std::string split = "train";
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> objects;
  nlohmann::json notes;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace ove6d
