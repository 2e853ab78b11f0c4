#include "ove6d/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "ove6d/error.hpp"

namespace ove6d {

Rotation::Rotation(const Mat3& m) : m_(m) {
  if (!m.allFinite()) throw InvalidArgument("rotation has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6) throw InvalidArgument("rotation is not orthonormal (error " + std::to_string(ortho) + ")");
  if (std::abs(m.determinant() - 1.0) > 1e-6) throw InvalidArgument("rotation determinant is not +1");
}

Rotation Rotation::project(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose(), Unchecked{});
}

Rotation Rotation::about_axis(const Vec3& axis, double radians) {
  if (axis.norm() < 1e-12) throw InvalidArgument("rotation axis is zero");
  return Rotation(Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix(), Unchecked{});
}

Pose Pose::inverse() const {
  const Rotation rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

Pose Pose::operator*(const Pose& o) const {
  return {rotation * o.rotation, rotation * o.translation + translation};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw InvalidArgument("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
  if (px < 0 || px > width || py < 0 || py > height) throw InvalidArgument("principal point outside image");
}

void TriangleMesh::validate() const {
  if (vertices.size() < 4) throw InvalidArgument("mesh needs at least 4 vertices");
  const int n = static_cast<int>(vertices.size());
  for (const auto& f : faces)
    for (int idx : f)
      if (idx < 0 || idx >= n) throw InvalidArgument("face index " + std::to_string(idx) + " out of range");
  for (const auto& v : vertices)
    if (!v.allFinite()) throw InvalidArgument("mesh vertex is not finite");
}

Rotation canonical_viewpoint(const Vec3& view_direction) {
  const Vec3 z = view_direction.normalized();
  Vec3 up = Vec3::UnitZ() - Vec3::UnitZ().dot(z) * z;
  Mat3 m;
  if (up.norm() < 1e-6) {
    // View along the object Z axis: image x follows object +X.
    const Vec3 x = (Vec3::UnitX() - Vec3::UnitX().dot(z) * z).normalized();
    m.row(0) = x.transpose();
    m.row(1) = z.cross(x).transpose();
    m.row(2) = z.transpose();
  } else {
    // Image y points down, so the camera y axis is the negated up vector.
    const Vec3 y = -up.normalized();
    m.row(0) = y.cross(z).transpose();
    m.row(1) = y.transpose();
    m.row(2) = z.transpose();
  }
  return Rotation::project(m);
}

std::vector<Rotation> sample_viewpoints(int n) {
  if (n < 2) throw InvalidArgument("sample_viewpoints needs n >= 2");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Rotation> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    out.push_back(canonical_viewpoint(Vec3(r * std::cos(phi), r * std::sin(phi), z)));
  }
  return out;
}

RotationSplit decompose_rotation(const Rotation& r) {
  const Rotation gamma = canonical_viewpoint(r.view_direction());
  const Mat3 theta = r.matrix() * gamma.matrix().transpose();
  // theta fixes the optical axis up to round-off; rebuild it exactly from its in-plane angle.
  const double angle = std::atan2(theta(1, 0), theta(0, 0));
  return {Rotation::rot_z(angle), gamma};
}

Rotation inplane_matrix(const Vec2& theta_vec) {
  const double n = theta_vec.norm();
  if (n < 1e-12) throw InvalidArgument("in-plane vector is zero");
  const Vec2 t = theta_vec / n;
  Mat3 m;
  m << t.x(), -t.y(), 0, t.y(), t.x(), 0, 0, 0, 1;
  return Rotation::project(m);
}

double inplane_angle(const Rotation& r_theta) {
  return std::atan2(r_theta.matrix()(1, 0), r_theta.matrix()(0, 0));
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
  const double c = ((a.matrix().transpose() * b.matrix()).trace() - 1.0) / 2.0;
  return rad2deg(std::acos(std::clamp(c, -1.0, 1.0)));
}

double view_angle(const Rotation& a, const Rotation& b) {
  const double c = a.view_direction().dot(b.view_direction());
  return rad2deg(std::acos(std::clamp(c, -1.0, 1.0)));
}

double average_adjacent_view_distance(const std::vector<Rotation>& views) {
  if (views.size() < 2) throw InvalidArgument("need at least two viewpoints");
  const std::size_t n = views.size();
  std::vector<Vec3> dirs(n);
  for (std::size_t i = 0; i < n; ++i) dirs[i] = views[i].view_direction();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) best = std::max(best, dirs[i].dot(dirs[j]));
    total += rad2deg(std::acos(std::clamp(best, -1.0, 1.0)));
  }
  return total / static_cast<double>(n);
}

double point_set_diameter(const std::vector<Vec3>& points) {
  double best = 0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) best = std::max(best, (points[i] - points[j]).squaredNorm());
  return std::sqrt(best);
}

namespace {

struct HullFace {
  std::array<int, 3> v;
  Vec3 normal;
  double offset;
  bool alive = true;
};

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

std::vector<Vec3> convex_hull_vertices(const std::vector<Vec3>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 4) return pts;

  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double eps = 1e-9 * std::max(1.0, (hi - lo).norm());

  // Initial tetrahedron from extreme points.
  int i0 = 0, i1 = 0;
  for (int i = 0; i < n; ++i) {
    if (pts[i].x() < pts[i0].x()) i0 = i;
    if (pts[i].x() > pts[i1].x()) i1 = i;
  }
  if ((pts[i1] - pts[i0]).norm() < eps) {
    for (int i = 0; i < n; ++i)
      if ((pts[i] - pts[i0]).norm() > (pts[i1] - pts[i0]).norm()) i1 = i;
    if ((pts[i1] - pts[i0]).norm() < eps) return {pts[i0]};
  }
  const Vec3 axis = (pts[i1] - pts[i0]).normalized();
  int i2 = -1;
  double best = eps;
  for (int i = 0; i < n; ++i) {
    const Vec3 d = pts[i] - pts[i0];
    const double dist = (d - d.dot(axis) * axis).norm();
    if (dist > best) best = dist, i2 = i;
  }
  if (i2 < 0) return pts;
  const Vec3 plane_n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    const double dist = std::abs((pts[i] - pts[i0]).dot(plane_n));
    if (dist > best) best = dist, i3 = i;
  }
  if (i3 < 0) return pts;  // coplanar: every point is a candidate

  const Vec3 interior = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  std::vector<HullFace> faces;
  std::unordered_map<std::uint64_t, int> edge_to_face;

  auto add_face = [&](int a, int b, int c) {
    HullFace f;
    f.v = {a, b, c};
    f.normal = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double len = f.normal.norm();
    f.normal = len > 0 ? Vec3(f.normal / len) : Vec3::Zero();
    f.offset = f.normal.dot(pts[a]);
    const int id = static_cast<int>(faces.size());
    faces.push_back(f);
    edge_to_face[edge_key(a, b)] = id;
    edge_to_face[edge_key(b, c)] = id;
    edge_to_face[edge_key(c, a)] = id;
  };
  auto add_oriented = [&](int a, int b, int c) {
    const Vec3 nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    if (nrm.dot(pts[a] - interior) < 0) std::swap(b, c);
    add_face(a, b, c);
  };
  add_oriented(i0, i1, i2);
  add_oriented(i0, i1, i3);
  add_oriented(i0, i2, i3);
  add_oriented(i1, i2, i3);

  std::vector<int> visible;
  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.clear();
    for (int f = 0; f < static_cast<int>(faces.size()); ++f)
      if (faces[f].alive && faces[f].normal.dot(pts[p]) - faces[f].offset > eps) visible.push_back(f);
    if (visible.empty()) continue;

    std::vector<std::pair<int, int>> horizon;
    for (int f : visible) faces[f].alive = false;
    for (int f : visible) {
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) {
        const int a = v[e], b = v[(e + 1) % 3];
        auto it = edge_to_face.find(edge_key(b, a));
        if (it != edge_to_face.end() && faces[it->second].alive) horizon.emplace_back(a, b);
      }
    }
    for (int f : visible) {
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) {
        auto it = edge_to_face.find(edge_key(v[e], v[(e + 1) % 3]));
        if (it != edge_to_face.end() && it->second == f) edge_to_face.erase(it);
      }
    }
    for (auto [a, b] : horizon) add_face(a, b, p);
  }

  std::vector<char> on_hull(n, 0);
  for (const auto& f : faces)
    if (f.alive)
      for (int v : f.v) on_hull[v] = 1;
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i)
    if (on_hull[i]) out.push_back(pts[i]);
  return out;
}

double mesh_diameter(const TriangleMesh& mesh) {
  if (mesh.vertices.size() <= 20000) return point_set_diameter(mesh.vertices);
  return point_set_diameter(convex_hull_vertices(mesh.vertices));
}

}  // namespace ove6d
