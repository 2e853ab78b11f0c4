#include <doctest.h>

#include <cmath>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/metrics.hpp"
#include "ove6d/rng.hpp"

using namespace ove6d;

TEST_CASE("ADD and ADD-S") {
  const TriangleMesh m = generate_shape(random_shape_spec(ShapeFamily::Union, 2, "u"), 10);
  const Pose gt{Rotation::rot_x(0.3), Vec3(1, 2, 500)};
  CHECK(add_error(m.vertices, gt, gt) == 0);
  CHECK(adds_error(m.vertices, gt, gt) == 0);
  Pose moved = gt;
  moved.translation += Vec3(3, 4, 0);
  CHECK(add_error(m.vertices, gt, moved) == doctest::Approx(5));

  ShapeSpec s;
  s.family = ShapeFamily::Ellipsoid;
  s.main.family = ShapeFamily::Ellipsoid;
  s.diameter = 100;
  const TriangleMesh ball = generate_shape(s, 24);
  Pose spun = gt;
  spun.rotation = Rotation::about_axis(Vec3(1, 2, 3).normalized(), 1.1) * gt.rotation;
  CHECK(adds_error(ball.vertices, gt, spun) < 2.0);
  CHECK(add_error(ball.vertices, gt, spun) > 20.0);

  // ADD-S against a brute-force closest-point scan.
  CounterRng rng(4, 0);
  const Pose est{random_rotation(rng), Vec3(3, -2, 505)};
  double brute = 0;
  for (const auto& p : m.vertices) {
    const Vec3 e = est.apply(p);
    double best = 1e300;
    for (const auto& q : m.vertices) best = std::min(best, (e - gt.apply(q)).norm());
    brute += best;
  }
  CHECK(adds_error(m.vertices, gt, est) == doctest::Approx(brute / m.vertices.size()).epsilon(1e-12));
}

TEST_CASE("ADD recall") {
  auto rec = [](double err) {
    EvalRecord r;
    r.diameter = 100;
    r.error = err;
    return r;
  };
  CHECK(add_recall({rec(5), rec(9), rec(20)}) == doctest::Approx(2.0 / 3.0));
  CHECK(add_recall({rec(0), rec(0)}) == 1.0);
  CHECK(add_recall({rec(100), rec(100)}) == 0.0);
  CHECK_THROWS_AS(add_recall({}), InvalidArgument);
}

TEST_CASE("VSD") {
  const TriangleMesh m = generate_shape(random_shape_spec(ShapeFamily::Box, 3, "b"), 10);
  const EvalScene sc = make_eval_scene(m, mesh_diameter(m), 5);
  CHECK(vsd_error(sc.depth, m, sc.pose_gt, sc.pose_gt) == 0);
  Pose far = sc.pose_gt;
  far.translation.x() += 2000;
  CHECK(vsd_error(sc.depth, m, sc.pose_gt, far) == 1);
  Pose near = sc.pose_gt;
  near.translation.z() += 5;
  CHECK(vsd_error(sc.depth, m, sc.pose_gt, near) < 0.02);
  CHECK(vsd_recall({0.1, 0.5, 0.2, 0.31}) == doctest::Approx(0.5));
}

TEST_CASE("evaluation scenes") {
  const TriangleMesh m = generate_shape(random_shape_spec(ShapeFamily::Union, 6, "u"));
  const double d = mesh_diameter(m);
  const CameraIntrinsics k = eval_intrinsics();
  CHECK(k.width == 640);
  for (int s = 0; s < 10; ++s) {
    EvalScene sc = make_eval_scene(m, d, static_cast<std::uint64_t>(s));
    CHECK(sc.pose_gt.translation.z() >= 4 * d - 1e-9);
    CHECK(sc.pose_gt.translation.z() <= 8 * d + 1e-9);
    CHECK(sc.mask.count() == sc.depth.nonzero_count());
    const auto before = sc.mask.count();
    occlude(sc, 0.3, 7);
    CHECK(std::abs(1.0 - static_cast<double>(sc.mask.count()) / static_cast<double>(before) - 0.3) < 0.05);
  }
  CHECK(viewpoint_error_deg(Rotation::rot_z(1.0), Rotation()) == doctest::Approx(0).epsilon(1e-9));
  CHECK(inplane_error_deg(Rotation::rot_z(deg2rad(30)), Rotation()) == doctest::Approx(30));
}
