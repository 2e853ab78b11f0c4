#include <doctest.h>

#include <cmath>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/kdtree.hpp"
#include "ove6d/metrics.hpp"
#include "ove6d/pipeline.hpp"
#include "ove6d/preprocess.hpp"
#include "ove6d/rng.hpp"

using namespace ove6d;

namespace {

CameraIntrinsics camera() { return {600, 600, 159.5, 119.5, 320, 240}; }

TriangleMesh wedge() { return generate_shape(random_shape_spec(ShapeFamily::Union, 17, "wedge")); }

}  // namespace

TEST_CASE("center estimate") {
  const CameraIntrinsics k = camera();
  DepthFrame d(k);
  MaskFrame m(k.width, k.height);
  const float zs[3] = {900, 1000, 1100};
  int i = 0;
  for (int v = 110; v < 130; ++v)
    for (int u = 150; u < 170; ++u) {
      d.at(u, v) = zs[i++ % 3];
      m.set(u, v, true);
    }
  // 400 pixels cycling through three depths: 133 or 134 of each, median 1000.
  const CenterEstimate c = estimate_center(d, m);
  CHECK(c.median_depth == doctest::Approx(1000));
  CHECK(c.center.x() == doctest::Approx(159.5));
  CHECK(c.center.y() == doctest::Approx(119.5));
  CHECK(c.t_init.x() == doctest::Approx(0).epsilon(1e-9));
  CHECK(c.t_init.y() == doctest::Approx(0).epsilon(1e-9));
  CHECK(c.t_init.z() == doctest::Approx(1000));

  MaskFrame few(k.width, k.height);
  few.set(3, 3, true);
  CHECK_THROWS_AS(preprocess(d, few, 100), NoObjectError);
}

TEST_CASE("initial translation lands near the rendered object center") {
  const TriangleMesh mesh = wedge();
  const double diam = mesh_diameter(mesh);
  CounterRng rng(6, 0);
  for (int i = 0; i < 10; ++i) {
    Pose p{random_rotation(rng), Vec3(rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(700, 1000))};
    const DepthFrame d = render_depth(mesh, p, camera());
    const CenterEstimate c = estimate_center(d, mask_from_depth(d));
    // The median is taken on the visible surface, so it sits at most one radius in front of the center.
    CHECK((c.t_init - p.translation).norm() < 0.6 * diam);
    CHECK(c.t_init.z() < p.translation.z() + 1.0);
  }
}

TEST_CASE("location refinement") {
  ShapeSpec s;
  s.family = ShapeFamily::Ellipsoid;
  s.main.family = ShapeFamily::Ellipsoid;
  s.diameter = 100;
  const TriangleMesh ball = generate_shape(s, 32);
  const Vec3 t0(0, 0, 900);
  const Vec3 t = refine_location(ball, Rotation(), t0, camera());
  // Half the projected disk lies within rho < r / sqrt(2), so the median visible depth is
  // z - r / sqrt(2) and refinement pushes t_init back by that much.
  CHECK(std::abs(t.x()) < 1.0);
  CHECK(std::abs(t.y()) < 1.0);
  CHECK(t.z() == doctest::Approx(900 + 50 / std::sqrt(2.0)).epsilon(0.003));
}

TEST_CASE("hypothesis quality") {
  const TriangleMesh mesh = wedge();
  const double diam = mesh_diameter(mesh);
  const Pose gt{Rotation::rot_x(0.4) * Rotation::rot_y(-0.7), Vec3(10, -20, 800)};
  const DepthFrame obs = render_depth(mesh, gt, camera());
  CHECK(hypothesis_quality(mesh, gt, obs, diam).q == 0);

  Pose far = gt;
  far.translation.z() += 0.15 * diam;
  const auto qf = hypothesis_quality(mesh, far, obs, diam);
  // A few pixels on steep flanks can stay within tolerance.
  CHECK(qf.q > 0.99);

  double prev = -1;
  for (int i = 0; i <= 4; ++i) {
    Pose p = gt;
    p.translation += Vec3(0.04, 0.02, 0.03) * diam * i;
    const double q = hypothesis_quality(mesh, p, obs, diam).q;
    CHECK(q >= prev);
    prev = q;
  }

  Pose gone = gt;
  gone.translation.x() += 5000;
  const auto qd = hypothesis_quality(mesh, gone, obs, diam);
  CHECK(qd.degenerate);
  CHECK(qd.q == 1);
}

TEST_CASE("hypothesis selection") {
  std::vector<PoseHypothesis> h(4);
  h[0].quality_q = 0.3;
  h[1].quality_q = 0.1, h[1].verify_score = 0.2, h[1].source_rank = 1;
  h[2].quality_q = 0.1, h[2].verify_score = 0.5, h[2].source_rank = 4;
  h[3].quality_q = 0.1, h[3].verify_score = 0.5, h[3].source_rank = 2;
  CHECK(select_hypothesis(h) == 3);
}

TEST_CASE("kabsch and icp") {
  CounterRng rng(8, 0);
  std::vector<Vec3> model;
  for (int i = 0; i < 400; ++i) model.push_back(random_unit(rng) * rng.uniform(10, 60));
  const Pose truth{random_rotation(rng), Vec3(4, -7, 600)};
  std::vector<Vec3> scene;
  for (const auto& p : model) scene.push_back(truth.apply(p));
  const Pose k = kabsch(model, scene);
  CHECK(geodesic_angle(k.rotation, truth.rotation) < 1e-6);
  CHECK((k.translation - truth.translation).norm() < 1e-6);

  // Pure translation on a lattice coarser than twice the shift: every closest point is the true
  // match, so the first update is the closed-form centroid alignment.
  std::vector<Vec3> lattice, shifted;
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 5; ++z) lattice.emplace_back(40.0 * x, 40.0 * y, 40.0 * z);
  for (const auto& p : lattice) shifted.push_back(p + Vec3(10, -5, 3));
  const auto r1 = icp_refine(lattice, shifted, Pose{}, 1);
  CHECK((r1.pose.translation - Vec3(10, -5, 3)).norm() < 1e-6);

  const auto same = icp_refine(model, scene, truth);
  CHECK((same.pose.translation - truth.translation).norm() < 1e-9);
  CHECK(same.rms < 1e-9);
}

TEST_CASE("icp converges on a rendered cloud") {
  // Point-to-point accuracy is bounded by the vertex spacing of the model, so use a finer grid.
  const TriangleMesh mesh = generate_shape(random_shape_spec(ShapeFamily::Union, 17, "wedge"), 48);
  CounterRng rng(12, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose gt{random_rotation(rng), Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), 800)};
    const DepthFrame d = render_depth(mesh, gt, camera());
    const auto scene = mask_to_points(d, mask_from_depth(d));
    const Pose init{Rotation::about_axis(random_unit(rng), deg2rad(5)) * gt.rotation, gt.translation + random_unit(rng) * 10};
    const auto r = icp_refine(mesh.vertices, scene, init, 60, 1e-6);
    CHECK((r.pose.translation - gt.translation).norm() < 1.0);
    CHECK(geodesic_angle(r.pose.rotation, gt.rotation) < 0.5);
    for (std::size_t i = 1; i < r.rms_history.size(); ++i) CHECK(r.rms_history[i] <= r.rms_history[i - 1] + 1e-12);
  }
}

TEST_CASE("back-projection") {
  const CameraIntrinsics k = camera();
  DepthFrame d(k);
  MaskFrame m(k.width, k.height);
  d.at(159, 119) = 1000;
  m.set(159, 119, true);
  CameraIntrinsics centered = k;
  centered.px = 159, centered.py = 119;
  d.intrinsics = centered;
  auto pts = mask_to_points(d, m);
  REQUIRE(pts.size() == 1);
  CHECK((pts[0] - Vec3(0, 0, 1000)).norm() < 1e-12);

  const DepthFrame r = render_depth(wedge(), Pose{Rotation::rot_y(0.5), Vec3(0, 0, 700)}, k);
  MaskFrame half = mask_from_depth(r);
  for (int v = 0; v < k.height; v += 2)
    for (int u = 0; u < k.width; ++u) half.set(u, v, false);
  pts = mask_to_points(r, half);
  std::size_t expected = 0;
  for (std::size_t i = 0; i < half.bits.size(); ++i) expected += half.bits[i] && r.depth[i] > 0;
  CHECK(pts.size() == expected);
  std::size_t j = 0;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (half.at(u, v) && r.at(u, v) > 0) {
        const Vec2 px = k.project(pts[j++]);
        CHECK(std::abs(px.x() - u) < 1e-6);
        CHECK(std::abs(px.y() - v) < 1e-6);
      }
  CHECK(subsample_points(pts, 100).size() <= 100);
}

TEST_CASE("kd-tree against a linear scan") {
  CounterRng rng(3, 0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  pts.push_back(pts[10]);
  const KdTree tree(pts);
  for (int q = 0; q < 200; ++q) {
    const Vec3 x(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
    int best = 0;
    for (int i = 1; i < static_cast<int>(pts.size()); ++i)
      if ((pts[static_cast<std::size_t>(i)] - x).squaredNorm() < (pts[static_cast<std::size_t>(best)] - x).squaredNorm()) best = i;
    CHECK(tree.nearest(x).index == best);
  }
  CHECK(tree.nearest(pts[10]).index == 10);
}

TEST_CASE("estimate config") {
  EstimateConfig c;
  CHECK(c.n_views == 4000);
  CHECK(c.k_retrieval == 50);
  CHECK(c.p_proposals == 5);
  c.p_proposals = 60;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(EstimateConfig::from_json({{"bogus", 1}}), ConfigError);
  const auto j = EstimateConfig().to_json();
  CHECK(EstimateConfig::from_json(j).to_json() == j);
  CHECK(icp_mode_from_name("before-selection") == IcpMode::BeforeSelection);
}
