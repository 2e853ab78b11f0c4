#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <string>
#include <vector>

namespace ove6d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A proper rotation matrix. Construction validates orthonormality and det = +1 within 1e-6.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}
  explicit Rotation(const Mat3& m);

  /// Nearest rotation (SVD projection); for matrices that drifted through float storage.
  static Rotation project(const Mat3& m);
  static Rotation about_axis(const Vec3& axis, double radians);
  static Rotation rot_x(double radians) { return about_axis(Vec3::UnitX(), radians); }
  static Rotation rot_y(double radians) { return about_axis(Vec3::UnitY(), radians); }
  static Rotation rot_z(double radians) { return about_axis(Vec3::UnitZ(), radians); }

  const Mat3& matrix() const { return m_; }
  /// Camera optical axis expressed in the object frame (third row).
  Vec3 view_direction() const { return m_.row(2).transpose(); }
  Rotation transpose() const { return Rotation(m_.transpose(), Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

/// Object-to-camera rigid transform: x_cam = R x_obj + t, t in millimeters.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  Pose operator*(const Pose& o) const;
};

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double px = 0, py = 0;
  int width = 0, height = 0;

  void validate() const;
  Vec2 project(const Vec3& p) const { return {fx * p.x() / p.z() + px, fy * p.y() / p.z() + py}; }
  /// z * K^-1 [u, v, 1]^T
  Vec3 back_project(double u, double v, double z) const {
    return {(u - px) / fx * z, (v - py) / fy * z, z};
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::string object_id;

  /// Throws InvalidArgument when face indices are out of range or fewer than 4 vertices exist.
  void validate() const;
};

/// Near-uniform viewpoints from a Fibonacci lattice over the full sphere, each with the canonical
/// in-plane convention of canonical_viewpoint().
std::vector<Rotation> sample_viewpoints(int n);

/// Rotation with the given view direction (object frame) and zero in-plane component: the image
/// up axis is the projection of object +Z; when the view is parallel to Z, the image x axis is
/// object +X instead.
Rotation canonical_viewpoint(const Vec3& view_direction);

struct RotationSplit {
  Rotation r_theta;  ///< rotation about the camera optical axis
  Rotation r_gamma;  ///< canonical viewpoint rotation
};

/// r = r_theta * r_gamma.
RotationSplit decompose_rotation(const Rotation& r);

/// [[t1, -t2, 0], [t2, t1, 0], [0, 0, 1]] for a unit 2-vector (t1, t2).
Rotation inplane_matrix(const Vec2& theta_vec);

/// In-plane angle (radians, (-pi, pi]) of a rotation about the optical axis.
double inplane_angle(const Rotation& r_theta);

/// Geodesic distance on SO(3), degrees in [0, 180].
double geodesic_angle(const Rotation& a, const Rotation& b);

/// Angle between the view directions of two rotations, degrees.
double view_angle(const Rotation& a, const Rotation& b);

/// Mean nearest-neighbour view-direction angle of a viewpoint set (degrees), brute force.
double average_adjacent_view_distance(const std::vector<Rotation>& views);

/// Maximum pairwise vertex distance (mm). Exact pairwise scan up to 20000 vertices; above that
/// the scan runs over convex-hull vertices only.
double mesh_diameter(const TriangleMesh& mesh);
double point_set_diameter(const std::vector<Vec3>& points);

/// Vertices of the 3D convex hull (exact up to floating-point tolerance).
std::vector<Vec3> convex_hull_vertices(const std::vector<Vec3>& points);

constexpr double deg2rad(double d) { return d * 0.017453292519943295; }
constexpr double rad2deg(double r) { return r * 57.29577951308232; }

}  // namespace ove6d
