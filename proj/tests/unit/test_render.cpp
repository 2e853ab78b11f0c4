#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/render.hpp"
#include "ove6d/rng.hpp"

using namespace ove6d;

namespace {

CameraIntrinsics small_camera() { return {500, 500, 63.5, 47.5, 128, 96}; }

TriangleMesh square(double half) {
  TriangleMesh m;
  m.vertices = {{-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

TriangleMesh sphere(double diameter) {
  ShapeSpec s;
  s.family = ShapeFamily::Ellipsoid;
  s.main.family = ShapeFamily::Ellipsoid;
  s.diameter = diameter;
  return generate_shape(s, 32);
}

// Nearest intersection of the pixel ray with any triangle, camera frame.
std::optional<double> ray_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k, int u, int v) {
  const Vec3 dir = k.back_project(u, v, 1.0);
  std::optional<double> best;
  for (const auto& f : mesh.faces) {
    const Vec3 a = pose.apply(mesh.vertices[f[0]]), b = pose.apply(mesh.vertices[f[1]]), c = pose.apply(mesh.vertices[f[2]]);
    const Vec3 n = (b - a).cross(c - a);
    const double den = n.dot(dir);
    if (std::abs(den) < 1e-12) continue;
    const double s = n.dot(a) / den;
    const Vec3 p = s * dir;
    const double w0 = (b - a).cross(p - a).dot(n), w1 = (c - b).cross(p - b).dot(n), w2 = (a - c).cross(p - c).dot(n);
    if (w0 < 0 || w1 < 0 || w2 < 0) continue;
    if (s > 0 && (!best || p.z() < *best)) best = p.z();
  }
  return best;
}

std::vector<int> histogram(const DepthFrame& d, int bins) {
  float lo = 1e30f, hi = 0;
  for (float z : d.depth)
    if (z > 0) lo = std::min(lo, z), hi = std::max(hi, z);
  std::vector<int> h(static_cast<std::size_t>(bins), 0);
  for (float z : d.depth)
    if (z > 0) ++h[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((z - lo) / (hi - lo + 1e-6f) * bins)))];
  return h;
}

}  // namespace

TEST_CASE("fronto-parallel square reads its plane depth") {
  const auto k = small_camera();
  Pose pose;
  pose.translation = {0, 0, 1000};
  const DepthFrame d = render_depth(square(40), pose, k);
  int covered = 0;
  for (float z : d.depth)
    if (z > 0) {
      ++covered;
      CHECK(z == 1000.0f);
    }
  // 80 mm at 1000 mm and f = 500 spans 40 px per side.
  CHECK(covered == doctest::Approx(40 * 40).epsilon(0.06));

  const MaskFrame m = render_mask(square(40), pose, k);
  for (std::size_t i = 0; i < d.depth.size(); ++i) CHECK((d.depth[i] > 0) == (m.bits[i] != 0));
  CHECK(m.count() == d.nonzero_count());
  CHECK(mask_from_depth(d).bits == m.bits);
}

TEST_CASE("object outside the view leaves an empty frame") {
  Pose pose;
  pose.translation = {5000, 0, 1000};
  const MaskFrame m = render_mask(square(40), pose, small_camera());
  CHECK(m.count() == 0);
  pose.translation = {0, 0, -1000};
  CHECK_THROWS_AS(render_depth(square(40), pose, small_camera()), EmptyFrameError);
}

TEST_CASE("sphere center depth is distance minus radius") {
  const auto k = small_camera();
  Pose pose;
  pose.translation = {0, 0, 800};
  const DepthFrame d = render_depth(sphere(100), pose, k);
  // Polyhedral sphere: the facet under the center ray sits slightly inside the true surface.
  CHECK(d.at(64, 48) == doctest::Approx(750).epsilon(0.002));
  CHECK(d.at(64, 48) >= 750.0f);
}

TEST_CASE("raster agrees with a ray-cast oracle on random covered pixels") {
  const auto k = small_camera();
  const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Union, 21, "u"), 12);
  CounterRng rng(4, 0);
  Pose pose;
  pose.rotation = random_rotation(rng);
  pose.translation = {5, -3, 900};
  const DepthFrame d = render_depth(mesh, pose, k);
  int checked = 0;
  while (checked < 50) {
    const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(k.width)));
    const int v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k.height)));
    if (d.at(u, v) == 0) continue;
    const auto z = ray_depth(mesh, pose, k, u, v);
    REQUIRE(z);
    CHECK(std::abs(d.at(u, v) - *z) < 0.5);
    ++checked;
  }
}

TEST_CASE("codebook views") {
  const TriangleMesh ball = sphere(100);
  const DepthFrame d = render_codebook_view(ball, Rotation(), 5.0, 100.0);
  CHECK(d.width == kCodebookResolution);
  // Camera at 5 diameters: the nearest surface point is 500 - 50 mm away.
  const float zmin = *std::min_element(d.depth.begin(), d.depth.end(), [](float a, float b) {
    return (a > 0 ? a : 1e9f) < (b > 0 ? b : 1e9f);
  });
  CHECK(zmin == doctest::Approx(450).epsilon(0.003));

  const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Box, 2, "b"));
  const double diam = mesh_diameter(mesh);
  CounterRng rng(8, 0);
  for (int i = 0; i < 5; ++i) {
    const Rotation r = canonical_viewpoint(random_unit(rng));
    const DepthFrame a = render_codebook_view(mesh, r, 5.0, diam);
    const MaskFrame m = mask_from_depth(a);
    int u0 = a.width, u1 = -1, v0 = a.height, v1 = -1;
    for (int v = 0; v < a.height; ++v)
      for (int u = 0; u < a.width; ++u)
        if (m.at(u, v)) u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
    CHECK(std::abs((u0 + u1) / 2.0 - a.intrinsics.px) <= 1.0);
    CHECK(std::abs((v0 + v1) / 2.0 - a.intrinsics.py) <= 1.0);

    // The in-plane turned view has the same depth distribution.
    const DepthFrame b = render_codebook_view(mesh, Rotation::rot_z(deg2rad(40 + 50 * i)) * r, 5.0, diam);
    const auto ha = histogram(a, 16), hb = histogram(b, 16);
    const double na = static_cast<double>(a.nonzero_count()), nb = static_cast<double>(b.nonzero_count());
    double l1 = 0;
    for (int j = 0; j < 16; ++j) l1 += std::abs(ha[static_cast<std::size_t>(j)] / na - hb[static_cast<std::size_t>(j)] / nb);
    CHECK(l1 < 0.1);
  }
}
