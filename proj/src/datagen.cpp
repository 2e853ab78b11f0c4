#include "ove6d/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "ove6d/error.hpp"

namespace ove6d {

using nlohmann::json;

namespace {

constexpr std::array<ShapeFamily, 5> kFamilies = {ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Ellipsoid,
                                                  ShapeFamily::Superellipsoid, ShapeFamily::Union};

// Homogeneous degree-1 gauge of a primitive centered at its own origin: inside iff gauge <= 1.
double gauge(const Primitive& p, const Vec3& q) {
  const double x = std::abs(q.x() / p.semi_axes.x());
  const double y = std::abs(q.y() / p.semi_axes.y());
  const double z = std::abs(q.z() / p.semi_axes.z());
  switch (p.family) {
    case ShapeFamily::Box:
      return std::max({x, y, z});
    case ShapeFamily::Cylinder:
      return std::max(std::hypot(x, y), z);
    case ShapeFamily::Ellipsoid:
      return std::sqrt(x * x + y * y + z * z);
    case ShapeFamily::Superellipsoid: {
      const double xy = std::pow(std::pow(x, 2 / p.e2) + std::pow(y, 2 / p.e2), p.e2 / p.e1);
      const double f = xy + std::pow(z, 2 / p.e1);
      return std::pow(f, p.e1 / 2);
    }
    case ShapeFamily::Union:
      break;
  }
  throw InvalidArgument("a primitive cannot be a union");
}

// Three distinct semi-axes with max/min ratio of at least ~1.5, randomly permuted.
Vec3 distinct_axes(CounterRng& rng) {
  std::array<double, 3> a = {1.0, rng.uniform(0.5, 0.78), rng.uniform(0.28, 0.45)};
  for (int i = 2; i > 0; --i) std::swap(a[static_cast<std::size_t>(i)], a[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  return {a[0], a[1], a[2]};
}

Primitive random_primitive(ShapeFamily family, CounterRng& rng) {
  Primitive p;
  p.family = family;
  switch (family) {
    case ShapeFamily::Cylinder: {
      const double half_height = rng.uniform() < 0.5 ? rng.uniform(0.3, 0.6) : rng.uniform(1.6, 2.4);
      p.semi_axes = Vec3(1.0, 1.0, half_height);
      break;
    }
    case ShapeFamily::Superellipsoid:
      p.semi_axes = distinct_axes(rng);
      p.e1 = rng.uniform(0.3, 1.3);
      p.e2 = rng.uniform(0.3, 1.3);
      break;
    default:
      p.semi_axes = distinct_axes(rng);
      break;
  }
  return p;
}

}  // namespace

Vec3 random_unit(CounterRng& rng) {
  for (;;) {
    const Vec3 v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() > 1e-9) return v.normalized();
  }
}

Rotation random_rotation(CounterRng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Rotation::project(q.toRotationMatrix());
}


std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Box: return "box";
    case ShapeFamily::Cylinder: return "cylinder";
    case ShapeFamily::Ellipsoid: return "ellipsoid";
    case ShapeFamily::Superellipsoid: return "superellipsoid";
    case ShapeFamily::Union: return "union";
  }
  return "unknown";
}

ShapeFamily family_from_name(const std::string& name) {
  for (ShapeFamily f : kFamilies)
    if (family_name(f) == name) return f;
  throw DataError("unknown shape family '" + name + "'");
}

bool family_is_symmetric(ShapeFamily f) { return f != ShapeFamily::Union; }

bool Primitive::contains(const Vec3& p) const { return gauge(*this, rotation.transpose() * (p - offset)) <= 1.0; }

double Primitive::radius(const Vec3& d) const {
  if (offset.isZero(0)) return 1.0 / gauge(*this, rotation.transpose() * d);
  if (!contains(Vec3::Zero())) throw InvalidArgument("primitive does not contain the origin");
  double lo = 0, hi = offset.norm() + 2.0 * semi_axes.maxCoeff();
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (contains(mid * d) ? lo : hi) = mid;
  }
  return lo;
}

json ShapeSpec::to_json() const {
  auto prim = [](const Primitive& p) {
    const Eigen::Map<const Eigen::Matrix<double, 9, 1>> r(p.rotation.data());
    return json{{"family", family_name(p.family)},
                {"semi_axes", {p.semi_axes.x(), p.semi_axes.y(), p.semi_axes.z()}},
                {"e1", p.e1},
                {"e2", p.e2},
                {"rotation_col_major", std::vector<double>(r.data(), r.data() + 9)},
                {"offset", {p.offset.x(), p.offset.y(), p.offset.z()}}};
  };
  json j = {{"family", family_name(family)}, {"object_id", object_id}, {"diameter", diameter},
            {"seed", seed},                  {"main", prim(main)}};
  if (family == ShapeFamily::Union) j["extra"] = prim(extra);
  return j;
}

ShapeSpec random_shape_spec(ShapeFamily family, std::uint64_t seed, const std::string& object_id) {
  CounterRng rng(seed, CounterRng::hash("shape"));
  ShapeSpec s;
  s.family = family;
  s.seed = seed;
  s.object_id = object_id;
  s.diameter = rng.uniform(60.0, 280.0);
  if (family != ShapeFamily::Union) {
    s.main = random_primitive(family, rng);
    return s;
  }
  s.main = random_primitive(kFamilies[rng.below(4)], rng);
  s.extra = random_primitive(kFamilies[rng.below(4)], rng);
  s.extra.semi_axes *= rng.uniform(0.45, 0.7);
  // The extra primitive's longest axis points outward along a direction at least 25 degrees off
  // every axis of the main primitive, twisted at random about it, so the union keeps no rotational
  // symmetry. Its offset keeps the origin inside it, which leaves the union star-shaped about the
  // origin. Of 24 candidate directions the one where it protrudes most wins.
  int long_axis = 0;
  s.extra.semi_axes.maxCoeff(&long_axis);
  const double a_long = s.extra.semi_axes[long_axis];
  const double depth_frac = rng.uniform(0.55, 0.85);
  const double twist = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double best = -1;
  Vec3 best_dir = Vec3::UnitX();
  for (int k = 0; k < 24; ++k) {
    const Vec3 dir = random_unit(rng);
    if (dir.cwiseAbs().maxCoeff() > std::cos(deg2rad(25.0))) continue;
    const double protrusion = (1.0 + depth_frac) * a_long / s.main.radius(dir);
    if (protrusion > best) best = protrusion, best_dir = dir;
  }
  const Mat3 align = Eigen::Quaterniond::FromTwoVectors(Vec3::Unit(long_axis), best_dir).toRotationMatrix();
  s.extra.rotation = Eigen::AngleAxisd(twist, best_dir).toRotationMatrix() * align;
  const Vec3 best_offset = best_dir * depth_frac * a_long;
  s.extra.offset = best_offset;
  return s;
}

TriangleMesh generate_shape(const ShapeSpec& spec, int n) {
  if (n < 2) throw InvalidArgument("grid_cells must be at least 2");
  TriangleMesh mesh;
  mesh.object_id = spec.object_id;
  std::map<std::array<int, 3>, int> index;
  auto vertex = [&](std::array<int, 3> c) {
    auto [it, inserted] = index.try_emplace(c, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      Vec3 d;
      for (int a = 0; a < 3; ++a) d[a] = std::tan(std::numbers::pi / 4 * (2.0 * c[static_cast<std::size_t>(a)] / n - 1.0));
      d.normalize();
      double r = spec.main.radius(d);
      if (spec.family == ShapeFamily::Union) r = std::max(r, spec.extra.radius(d));
      mesh.vertices.push_back(r * d);
    }
    return it->second;
  };
  for (int axis = 0; axis < 3; ++axis)
    for (int sign : {-1, 1}) {
      const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
      // (e_u x e_v) = e_axis, so counter-clockwise order in (u, v) faces +axis.
      const bool flip = sign < 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          std::array<int, 4> q;
          const int corners[4][2] = {{i, j}, {i + 1, j}, {i + 1, j + 1}, {i, j + 1}};
          for (int k = 0; k < 4; ++k) {
            std::array<int, 3> c{};
            c[static_cast<std::size_t>(axis)] = sign > 0 ? n : 0;
            c[static_cast<std::size_t>(ua)] = corners[k][0];
            c[static_cast<std::size_t>(va)] = corners[k][1];
            q[static_cast<std::size_t>(k)] = vertex(c);
          }
          if (flip) {
            mesh.faces.push_back({q[0], q[2], q[1]});
            mesh.faces.push_back({q[0], q[3], q[2]});
          } else {
            mesh.faces.push_back({q[0], q[1], q[2]});
            mesh.faces.push_back({q[0], q[2], q[3]});
          }
        }
    }
  Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const auto& v : mesh.vertices) lo = lo.cwiseMin(v), hi = hi.cwiseMax(v);
  const Vec3 center = 0.5 * (lo + hi);
  for (auto& v : mesh.vertices) v -= center;
  const double scale = spec.diameter / point_set_diameter(mesh.vertices);
  for (auto& v : mesh.vertices) v *= scale;
  return mesh;
}

std::vector<ShapeSpec> generate_shape_specs(int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("shape count must be positive");
  const CounterRng root(seed, CounterRng::hash("shapes"));
  std::vector<ShapeSpec> out;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "obj_%03d", i);
    CounterRng r = root.derive(static_cast<std::uint64_t>(i));
    out.push_back(random_shape_spec(kFamilies[static_cast<std::size_t>(i) % kFamilies.size()], r.next_u64(), id));
  }
  return out;
}

std::vector<TriangleMesh> generate_shapes(int count, std::uint64_t seed) {
  std::vector<TriangleMesh> out;
  for (const auto& s : generate_shape_specs(count, seed)) out.push_back(generate_shape(s));
  return out;
}

std::vector<TrainingTriplet> sample_triplets(const TriangleMesh& mesh, double diameter, int anchors,
                                             std::uint64_t seed, double f_base, double gamma_min_deg,
                                             double gamma_max_deg) {
  if (anchors < 1) throw InvalidArgument("anchors must be positive");
  if (!(gamma_min_deg > 0 && gamma_min_deg <= gamma_max_deg && gamma_max_deg <= 180))
    throw InvalidArgument("bad gamma range");
  const CounterRng root(seed, CounterRng::hash("triplets"));
  std::vector<TrainingTriplet> out;
  out.reserve(static_cast<std::size_t>(anchors));
  for (int a = 0; a < anchors; ++a) {
    CounterRng rng = root.derive(static_cast<std::uint64_t>(a));
    TrainingTriplet t;
    t.anchor = canonical_viewpoint(random_unit(rng));
    t.theta_deg = rng.uniform(0.0, 360.0);
    t.theta_gt = Rotation::rot_z(deg2rad(t.theta_deg));
    const double gamma = rng.uniform(gamma_min_deg, gamma_max_deg);
    const double psi = rng.uniform(0.0, 2 * std::numbers::pi);
    const double phi = rng.uniform(0.0, 2 * std::numbers::pi);
    t.gamma_rotation =
        Rotation::rot_z(phi) * Rotation::about_axis(Vec3(std::cos(psi), std::sin(psi), 0), deg2rad(gamma)) * t.anchor;
    t.gamma_angle = view_angle(t.anchor, t.gamma_rotation);
    t.v = render_codebook_view(mesh, t.anchor, f_base, diameter);
    t.v_theta = render_codebook_view(mesh, t.theta_gt * t.anchor, f_base, diameter);
    t.v_gamma = render_codebook_view(mesh, t.gamma_rotation, f_base, diameter);
    out.push_back(std::move(t));
  }
  return out;
}

void AugmentConfig::validate() const {
  auto check = [](const Range& r, double lo, double hi, const char* name) {
    if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
      throw ConfigError(std::string("augment.") + name + " must satisfy " + std::to_string(lo) + " <= lo <= hi <= " +
                        std::to_string(hi));
  };
  check(rescale_ratio, 1e-3, 1.0, "rescale_ratio");
  check(laplace_dev, 0.0, 0.01, "laplace_dev");
  check(cutout_ratio, 0.0, 0.1, "cutout_ratio");
  check(gaussian_blur_sigma, 0.0, 1.5, "gaussian_blur_sigma");
  check(occlusion_area, 0.0, 1.0, "occlusion_area");
  if (!(occlusion_prob >= 0 && occlusion_prob <= 1)) throw ConfigError("augment.occlusion_prob must be in [0, 1]");
  if (!(noise_scale_mm > 0)) throw ConfigError("augment.noise_scale_mm must be positive");
}

AugmentConfig AugmentConfig::resample_only(double ratio) {
  AugmentConfig c;
  c.rescale_ratio = {ratio, ratio};
  c.laplace_dev = {0, 0};
  c.cutout_ratio = {0, 0};
  c.gaussian_blur_sigma = {0, 0};
  c.occlusion_prob = 0;
  return c;
}

json AugmentConfig::to_json() const {
  auto r = [](const Range& x) { return json::array({x.lo, x.hi}); };
  return {{"rescale_ratio", r(rescale_ratio)},
          {"laplace_dev", r(laplace_dev)},
          {"cutout_ratio", r(cutout_ratio)},
          {"gaussian_blur_sigma", r(gaussian_blur_sigma)},
          {"occlusion_prob", occlusion_prob},
          {"occlusion_area", r(occlusion_area)},
          {"noise_scale_mm", noise_scale_mm}};
}

AugmentConfig AugmentConfig::from_json(const json& j) {
  AugmentConfig c;
  auto range = [](const json& v, const std::string& k) {
    if (!v.is_array() || v.size() != 2) throw ConfigError("augment." + k + " must be a [lo, hi] pair");
    return Range{v[0].get<double>(), v[1].get<double>()};
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "rescale_ratio") c.rescale_ratio = range(*it, k);
      else if (k == "laplace_dev") c.laplace_dev = range(*it, k);
      else if (k == "cutout_ratio") c.cutout_ratio = range(*it, k);
      else if (k == "gaussian_blur_sigma") c.gaussian_blur_sigma = range(*it, k);
      else if (k == "occlusion_prob") c.occlusion_prob = it->get<double>();
      else if (k == "occlusion_area") c.occlusion_area = range(*it, k);
      else if (k == "noise_scale_mm") c.noise_scale_mm = it->get<double>();
      else throw ConfigError("unknown augment key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("augment." + k + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

namespace {

// Bilinear resample that ignores zero (invalid) source pixels; output is 0 where no valid
// neighbour contributes.
std::vector<float> resample_valid(const std::vector<float>& src, int sw, int sh, int dw, int dh) {
  std::vector<float> out(static_cast<std::size_t>(dw) * dh, 0.0f);
  const double sx = static_cast<double>(sw) / dw, sy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      double acc = 0, wsum = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int xx = std::clamp(x0 + dx, 0, sw - 1), yy = std::clamp(y0 + dy, 0, sh - 1);
          const float z = src[static_cast<std::size_t>(yy) * sw + xx];
          if (z <= 0) continue;
          const double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy);
          acc += w * z;
          wsum += w;
        }
      if (wsum > 1e-9) out[static_cast<std::size_t>(y) * dw + x] = static_cast<float>(acc / wsum);
    }
  }
  return out;
}

void blur_valid(std::vector<float>& img, int w, int h, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  for (int i = -r; i <= r; ++i) k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  auto pass = [&](const std::vector<float>& in, bool horizontal) {
    std::vector<float> out(in.size(), 0.0f);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t c = static_cast<std::size_t>(y) * w + x;
        if (img[c] <= 0) continue;
        double acc = 0, wsum = 0;
        for (int i = -r; i <= r; ++i) {
          const int xx = horizontal ? x + i : x, yy = horizontal ? y : y + i;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          const float z = in[static_cast<std::size_t>(yy) * w + xx];
          if (z <= 0) continue;
          acc += k[static_cast<std::size_t>(i + r)] * z;
          wsum += k[static_cast<std::size_t>(i + r)];
        }
        out[c] = static_cast<float>(acc / wsum);
      }
    return out;
  };
  img = pass(pass(img, true), false);
}

}  // namespace

DepthFrame augment(const DepthFrame& frame, const AugmentConfig& cfg, std::uint64_t seed, AugmentTrace* trace) {
  cfg.validate();
  CounterRng rng(seed, CounterRng::hash("augment"));
  AugmentTrace tr;
  tr.rescale_ratio = cfg.rescale_ratio.draw(rng);
  tr.laplace_dev = cfg.laplace_dev.draw(rng);
  const double cutout = cfg.cutout_ratio.draw(rng);
  tr.blur_sigma = cfg.gaussian_blur_sigma.draw(rng);
  tr.occluded = rng.uniform() < cfg.occlusion_prob;

  const int W = frame.width, H = frame.height;
  const int w = std::max(2, static_cast<int>(std::lround(W * tr.rescale_ratio)));
  const int h = std::max(2, static_cast<int>(std::lround(H * tr.rescale_ratio)));
  std::vector<float> small = resample_valid(frame.depth, W, H, w, h);

  if (tr.laplace_dev > 0) {
    CounterRng noise = rng.derive("noise");
    for (auto& z : small) {
      if (z <= 0) continue;
      z += static_cast<float>(noise.laplace(tr.laplace_dev) * cfg.noise_scale_mm);
      if (!(z > 0)) z = 0;
    }
  }
  if (cutout > 0) {
    const double area = cutout * w * h;
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    tr.cutout_w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, w);
    tr.cutout_h = std::clamp(static_cast<int>(std::lround(area / tr.cutout_w)), 1, h);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - tr.cutout_w + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - tr.cutout_h + 1)));
    for (int y = y0; y < y0 + tr.cutout_h; ++y)
      for (int x = x0; x < x0 + tr.cutout_w; ++x) small[static_cast<std::size_t>(y) * w + x] = 0;
  }
  if (tr.blur_sigma > 0.05) blur_valid(small, w, h, tr.blur_sigma);
  if (tr.occluded) {
    int umin = w, umax = -1, vmin = h, vmax = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (small[static_cast<std::size_t>(y) * w + x] > 0)
          umin = std::min(umin, x), umax = std::max(umax, x), vmin = std::min(vmin, y), vmax = std::max(vmax, y);
    const double area_frac = cfg.occlusion_area.draw(rng);
    const bool circle = rng.uniform() < 0.5;
    const double cx = rng.uniform(umin, umax + 1.0), cy = rng.uniform(vmin, vmax + 1.0);
    if (umax >= 0) {
      const double area = area_frac * (umax - umin + 1) * (vmax - vmin + 1);
      const double half = 0.5 * std::sqrt(area), radius = std::sqrt(area / std::numbers::pi);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          const bool inside = circle ? dx * dx + dy * dy <= radius * radius
                                     : std::abs(dx) <= half && std::abs(dy) <= half;
          if (inside) small[static_cast<std::size_t>(y) * w + x] = 0;
        }
    }
  }

  DepthFrame out = frame;
  out.depth = resample_valid(small, w, h, W, H);
  for (std::size_t i = 0; i < out.depth.size(); ++i)
    if (!(frame.depth[i] > 0)) out.depth[i] = 0;
  if (trace) *trace = tr;
  return out;
}

json Manifest::to_json() const {
  json objs = json::array();
  for (const auto& e : objects)
    objs.push_back({{"object_id", e.object_id},
                    {"mesh", e.mesh_path},
                    {"family", family_name(e.family)},
                    {"symmetric", family_is_symmetric(e.family)},
                    {"diameter", e.diameter},
                    {"seed", e.seed},
                    {"split", e.split}});
  json j = {{"seed", seed}, {"objects", objs}};
  if (!notes.is_null()) j["notes"] = notes;
  return j;
}

Manifest Manifest::from_json(const json& j) {
  try {
    Manifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("objects")) {
      ManifestEntry e;
      e.object_id = o.at("object_id").get<std::string>();
      e.mesh_path = o.at("mesh").get<std::string>();
      e.family = family_from_name(o.at("family").get<std::string>());
      e.diameter = o.at("diameter").get<double>();
      e.seed = o.at("seed").get<std::uint64_t>();
      e.split = o.value("split", "train");
      m.objects.push_back(e);
    }
    if (j.contains("notes")) m.notes = j["notes"];
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << m.to_json().dump(2) << '\n';
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  try {
    return Manifest::from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
}

}  // namespace ove6d
