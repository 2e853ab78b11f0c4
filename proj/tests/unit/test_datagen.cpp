#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/kdtree.hpp"

using namespace ove6d;

namespace {

std::vector<double> normalized_histogram(const DepthFrame& d, float lo, float hi, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0);
  double n = 0;
  for (float z : d.depth)
    if (z > 0) {
      const int b = std::clamp(static_cast<int>((z - lo) / (hi - lo) * bins), 0, bins - 1);
      h[static_cast<std::size_t>(b)] += 1, n += 1;
    }
  for (auto& x : h) x /= n;
  return h;
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("procedural shapes") {
  const auto a = generate_shapes(20, 42), b = generate_shapes(20, 42);
  std::set<ShapeFamily> families;
  const auto specs = generate_shape_specs(20, 42);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].vertices == b[i].vertices);
    CHECK(a[i].faces == b[i].faces);
    families.insert(specs[i].family);
    const double d = mesh_diameter(a[i]);
    CHECK(d >= 50);
    CHECK(d <= 300);
  }
  CHECK(families.size() >= 3);
}

TEST_CASE("unions have no rotational symmetry") {
  // Turning a union about any axis of its main primitive, or a random axis, moves its surface by a
  // visible amount, so scoring unions with ADD is justified.
  CounterRng rng(3, 0);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Union, seed, "u"));
    const double diam = mesh_diameter(mesh);
    const KdTree tree(mesh.vertices);
    std::vector<Vec3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    for (int i = 0; i < 3; ++i) axes.push_back(random_unit(rng));
    for (const Vec3& axis : axes)
      for (double deg : {30.0, 90.0, 180.0}) {
        const Rotation r = Rotation::about_axis(axis, deg2rad(deg));
        // Vertex spacing alone displaces a symmetric shape by well under 0.04 d.
        int moved = 0;
        for (const Vec3& p : mesh.vertices) moved += std::sqrt(tree.nearest(r * p).dist2) > 0.04 * diam;
        CHECK_MESSAGE(moved > 0.01 * static_cast<double>(mesh.vertices.size()), ("seed " + std::to_string(seed) + " axis " + std::to_string(&axis - axes.data()) + " deg " + std::to_string(deg)));
      }
  }
}

TEST_CASE("triplets") {
  const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Union, 5, "u"));
  const double diam = mesh_diameter(mesh);
  const auto trips = sample_triplets(mesh, diam, 12, 7);
  REQUIRE(trips.size() == 12);
  int separated = 0;
  for (const auto& t : trips) {
    float lo = 1e9f, hi = 0;
    for (const DepthFrame* f : {&t.v, &t.v_theta, &t.v_gamma})
      for (float z : f->depth)
        if (z > 0) lo = std::min(lo, z), hi = std::max(hi, z);
    const auto hv = normalized_histogram(t.v, lo, hi, 12), ht = normalized_histogram(t.v_theta, lo, hi, 12),
               hg = normalized_histogram(t.v_gamma, lo, hi, 12);
    CHECK(l1(hv, ht) < 0.12);
    if (l1(hv, hg) > l1(hv, ht)) ++separated;
    CHECK(t.gamma_angle >= kGammaMinDeg - 1e-6);
    CHECK(t.gamma_angle <= kGammaMaxDeg + 1e-6);
  }
  CHECK(separated >= 10);
}

TEST_CASE("in-plane angles are uniform") {
  // One-sample Kolmogorov-Smirnov against U[0, 360), 10^4 draws, alpha = 0.01.
  const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Box, 1, "b"), 4);
  std::vector<double> th;
  for (int s = 0; th.size() < 10000; ++s)
    for (const auto& t : sample_triplets(mesh, mesh_diameter(mesh), 1, static_cast<std::uint64_t>(s))) th.push_back(t.theta_deg);
  std::sort(th.begin(), th.end());
  double dmax = 0;
  const double n = static_cast<double>(th.size());
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double f = th[i] / 360.0;
    dmax = std::max({dmax, (i + 1) / n - f, f - i / n});
  }
  CHECK(dmax < 1.628 / std::sqrt(n));
}

TEST_CASE("augmentation") {
  CameraIntrinsics k{100, 100, 31.5, 31.5, 64, 64};
  DepthFrame plane(k);
  for (int v = 8; v < 56; ++v)
    for (int u = 8; u < 56; ++u) plane.at(u, v) = 700.0f;

  // Resample only: a constant region stays constant, nothing appears off the object.
  const DepthFrame r = augment(plane, AugmentConfig::resample_only(0.5), 1);
  for (std::size_t i = 0; i < r.depth.size(); ++i) {
    if (plane.depth[i] > 0) CHECK(r.depth[i] == doctest::Approx(700.0f));
    else CHECK(r.depth[i] == 0);
  }

  AugmentConfig cut = AugmentConfig::resample_only(1.0);
  cut.cutout_ratio = {0.1, 0.1};
  AugmentTrace tr;
  DepthFrame full(k);
  std::fill(full.depth.begin(), full.depth.end(), 500.0f);
  const DepthFrame c = augment(full, cut, 3, &tr);
  std::size_t zeros = 0;
  for (float z : c.depth) zeros += z == 0;
  CHECK(zeros == static_cast<std::size_t>(tr.cutout_w * tr.cutout_h));
  CHECK(std::abs(tr.cutout_w * tr.cutout_h - 0.1 * 64 * 64) <= tr.cutout_w + tr.cutout_h);

  const AugmentConfig def;
  CHECK(def.occlusion_prob == 0.2);
  CameraIntrinsics tiny{10, 10, 3.5, 3.5, 8, 8};
  DepthFrame small(tiny);
  std::fill(small.depth.begin(), small.depth.end(), 300.0f);
  int occluded = 0;
  for (int s = 0; s < 10000; ++s) {
    augment(small, def, static_cast<std::uint64_t>(s), &tr);
    occluded += tr.occluded;
  }
  CHECK(std::abs(occluded / 10000.0 - 0.2) < 0.02);

  AugmentConfig bad;
  bad.cutout_ratio = {0.0, 0.5};
  CHECK_THROWS_AS(augment(plane, bad, 1), ConfigError);
}

TEST_CASE("manifest round trip") {
  Manifest m;
  m.seed = 12;
  m.objects.push_back({"shape_000", "meshes/shape_000.ply", ShapeFamily::Union, 123.5, 99, "train"});
  const auto p = std::filesystem::temp_directory_path() / "ove6d_unit_manifest.json";
  save_manifest(m, p);
  const Manifest b = load_manifest(p);
  REQUIRE(b.objects.size() == 1);
  CHECK(b.seed == 12);
  CHECK(b.objects[0].family == ShapeFamily::Union);
  CHECK(b.objects[0].diameter == 123.5);
  std::filesystem::remove(p);
}
