#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/geometry.hpp"
#include "ove6d/mesh_io.hpp"
#include "ove6d/rng.hpp"

using namespace ove6d;

namespace {

// Quaternion form of the geodesic distance, independent of the trace formula.
double quaternion_angle_deg(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond qa(a.matrix()), qb(b.matrix());
  return rad2deg(2.0 * std::acos(std::min(1.0, std::abs(qa.dot(qb)))));
}

TriangleMesh cube(double side) {
  TriangleMesh m;
  const double h = side / 2;
  for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h);
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

}  // namespace

TEST_CASE("sampled viewpoints have the published adjacent spacing") {
  // Brute-force nearest neighbour over every pair, frozen from this oracle.
  auto aavd = [](int n) {
    const auto views = sample_viewpoints(n);
    double sum = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      double best = 180;
      for (std::size_t j = 0; j < views.size(); ++j)
        if (i != j) best = std::min(best, view_angle(views[i], views[j]));
      sum += best;
    }
    return sum / static_cast<double>(n);
  };
  const double a1000 = aavd(1000);
  CHECK(a1000 == doctest::Approx(6.1).epsilon(0.2));
  CHECK(average_adjacent_view_distance(sample_viewpoints(1000)) == doctest::Approx(a1000).epsilon(1e-12));
  CHECK(a1000 == doctest::Approx(6.11154).epsilon(1e-5));
  const double a4000 = average_adjacent_view_distance(sample_viewpoints(4000));
  CHECK(std::abs(a4000 - 3.1) < 0.6);
  CHECK(a4000 == doctest::Approx(3.10818).epsilon(1e-5));
}

TEST_CASE("decomposition splits off the in-plane part") {
  auto s = decompose_rotation(Rotation());
  CHECK(geodesic_angle(s.r_theta, Rotation()) < 1e-9);
  CHECK(geodesic_angle(s.r_gamma, Rotation()) < 1e-9);

  s = decompose_rotation(Rotation::rot_z(deg2rad(37)));
  CHECK(geodesic_angle(s.r_theta, Rotation::rot_z(deg2rad(37))) < 1e-9);
  CHECK(geodesic_angle(s.r_gamma, Rotation()) < 1e-9);

  CounterRng rng(3, 0);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = random_rotation(rng);
    const auto d = decompose_rotation(r);
    CHECK(((d.r_theta * d.r_gamma).matrix() - r.matrix()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(d.r_theta.matrix()(2, 2) - 1.0) < 1e-9);
  }
}

TEST_CASE("in-plane matrix from a unit vector") {
  CHECK((inplane_matrix({1, 0}).matrix() - Mat3::Identity()).norm() < 1e-12);
  Mat3 r90;
  r90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((inplane_matrix({0, 1}).matrix() - r90).norm() < 1e-12);
  const double a = deg2rad(30);
  CHECK((inplane_matrix({std::cos(a), std::sin(a)}).matrix() - Rotation::rot_z(a).matrix()).norm() < 1e-12);
  CHECK(inplane_angle(Rotation::rot_z(a)) == doctest::Approx(a));
}

TEST_CASE("geodesic angle agrees with the quaternion oracle") {
  CHECK(geodesic_angle(Rotation(), Rotation()) == doctest::Approx(0));
  CHECK(geodesic_angle(Rotation(), Rotation::rot_z(deg2rad(90))) == doctest::Approx(90));
  CounterRng rng(11, 0);
  for (int i = 0; i < 200; ++i) {
    const Rotation a = random_rotation(rng), b = random_rotation(rng);
    CHECK(std::abs(geodesic_angle(a, b) - quaternion_angle_deg(a, b)) < 1e-6);
  }
}

TEST_CASE("rotation rejects non-orthonormal input") {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 1.1;
  CHECK_THROWS(Rotation(m));
  CHECK_THROWS(Rotation(-Mat3::Identity()));
}

TEST_CASE("mesh diameter") {
  CHECK(mesh_diameter(cube(100)) == doctest::Approx(std::sqrt(3.0) * 100).epsilon(1e-9));

  TriangleMesh tet;
  tet.vertices = {{0, 0, 0}, {10, 0, 0}, {0, 20, 0}, {3, 4, 30}};
  tet.faces = {{0, 1, 2}, {0, 1, 3}, {1, 2, 3}, {0, 2, 3}};
  double brute = 0;
  for (const auto& a : tet.vertices)
    for (const auto& b : tet.vertices) brute = std::max(brute, (a - b).norm());
  CHECK(mesh_diameter(tet) == doctest::Approx(brute));

  ShapeSpec s;
  s.family = ShapeFamily::Ellipsoid;
  s.main.family = ShapeFamily::Ellipsoid;
  s.diameter = 100;
  s.object_id = "sphere";
  CHECK(mesh_diameter(generate_shape(s, 48)) == doctest::Approx(100).epsilon(0.02));
}

TEST_CASE("convex hull keeps the extreme points") {
  CounterRng rng(5, 0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(random_unit(rng) * rng.uniform(0, 50));
  const auto hull = convex_hull_vertices(pts);
  CHECK(hull.size() < pts.size());
  CHECK(point_set_diameter(hull) == doctest::Approx(point_set_diameter(pts)));
}

TEST_CASE("mesh io") {
  const auto dir = std::filesystem::temp_directory_path() / "ove6d_unit_mesh";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "tri.obj");
    f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
  }
  const TriangleMesh tri = load_mesh(dir / "tri.obj");
  CHECK(tri.vertices.size() == 3);
  CHECK(tri.faces.size() == 1);

  const TriangleMesh m = generate_shape(random_shape_spec(ShapeFamily::Superellipsoid, 9, "se"));
  for (const char* ext : {".ply", ".obj"}) {
    const auto p = dir / (std::string("se") + ext);
    save_mesh(m, p);
    const TriangleMesh back = load_mesh(p);
    CHECK(back.faces == m.faces);
    REQUIRE(back.vertices.size() == m.vertices.size());
    double err = 0;
    for (std::size_t i = 0; i < m.vertices.size(); ++i) err = std::max(err, (back.vertices[i] - m.vertices[i]).norm());
    CHECK(err < 1e-3);
  }

  const auto ply = dir / "se.ply";
  const auto size = std::filesystem::file_size(ply);
  std::filesystem::resize_file(ply, size / 2);
  CHECK_THROWS_AS(load_mesh(ply), DataError);
  std::filesystem::remove_all(dir);
}
