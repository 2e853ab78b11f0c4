#include "ove6d/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "ove6d/codebook.hpp"
#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/model.hpp"
#include "ove6d/nn/checkpoint.hpp"
#include "ove6d/nn/ops.hpp"
#include "ove6d/rng.hpp"

namespace ove6d {

using nn::Tape;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, CounterRng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double norm(const Tensor<double>& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

}  // namespace

int random_projection(Tape<double>& tape, int y, std::uint64_t seed) {
  CounterRng rng(seed, CounterRng::hash("projection"));
  const Tensor<double>& v = tape.value(y);
  std::vector<double> w(v.size());
  double s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    w[i] = rng.uniform(-1, 1);
    s += w[i] * v[i];
  }
  return tape.push(Tensor<double>({1}, {s}), tape.needs_grad(y), [y, w](Tape<double>& t, int self) {
    const double g = t.grad(self)[0];
    Tensor<double>& gy = t.grad_mut(y);
    for (std::size_t i = 0; i < w.size(); ++i) gy[i] += g * w[i];
  });
}

GradCheckResult grad_check(const std::string& name, const std::vector<Tensor<double>>& inputs,
                           const std::function<int(Tape<double>&, const std::vector<int>&)>& build, double eps,
                           double tol) {
  auto eval = [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* grads) {
    Tape<double> tape(grads != nullptr);
    std::vector<int> ids;
    for (const auto& t : in) ids.push_back(tape.variable(t));
    const int out = build(tape, ids);
    const double v = tape.value(out)[0];
    if (grads) {
      tape.backward(out);
      for (int id : ids) grads->push_back(tape.grad(id));
    }
    return v;
  };
  std::vector<Tensor<double>> analytic;
  eval(inputs, &analytic);
  GradCheckResult r{name, 0, false};
  // Tensors whose true gradient is zero only see finite-difference noise; measure them against
  // the overall gradient scale.
  double global = 0;
  for (const auto& g : analytic) global += norm(g) * norm(g);
  const double floor = std::max(1e-12, 1e-6 * std::sqrt(global));
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> numeric(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + eps;
      const double fp = eval(work, nullptr);
      work[k][i] = x0 - eps;
      const double fm = eval(work, nullptr);
      work[k][i] = x0;
      numeric[i] = (fp - fm) / (2 * eps);
    }
    Tensor<double> diff = numeric;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= analytic[k][i];
    const double scale = std::max({norm(numeric), norm(analytic[k]), floor});
    r.max_rel_err = std::max(r.max_rel_err, norm(diff) / scale);
  }
  r.pass = r.max_rel_err < tol;
  return r;
}

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed) {
  CounterRng rng(seed, CounterRng::hash("gradient-suite"));
  std::vector<GradCheckResult> out;
  auto proj = [&](Tape<double>& t, int y) { return random_projection(t, y, seed); };

  out.push_back(grad_check("conv2d stride 1",
                           {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::conv2d(t, v[0], v[1], v[2], 1)); }));
  out.push_back(grad_check("conv2d stride 2", {random_tensor({2, 3, 6, 7}, rng), random_tensor({2, 3, 3, 3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::conv2d(t, v[0], v[1], -1, 2)); }));
  {
    Tensor<double> rm({2}, {0.1, -0.2}), rv({2}, {0.8, 1.3});
    std::vector<double> bm, bv;
    nn::BatchNormState<double> st{&rm, &rv, &bm, &bv};
    const auto x = random_tensor({3, 2, 3, 3}, rng), g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
    out.push_back(grad_check("batch_norm train", {x, g, b}, [&](Tape<double>& t, const std::vector<int>& v) {
      return proj(t, nn::batch_norm(t, v[0], v[1], v[2], st, true));
    }));
    out.push_back(grad_check("batch_norm eval", {x, g, b}, [&](Tape<double>& t, const std::vector<int>& v) {
      return proj(t, nn::batch_norm(t, v[0], v[1], v[2], st, false));
    }));
  }
  out.push_back(grad_check("relu", {random_tensor({2, 3, 4, 4}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::relu(t, v[0])); }));
  out.push_back(grad_check("max_pool2d", {random_tensor({2, 2, 4, 6}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::max_pool2d(t, v[0])); }));
  out.push_back(grad_check("global_avg_pool", {random_tensor({2, 3, 3, 3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::global_avg_pool(t, v[0])); }));
  out.push_back(grad_check("fully_connected", {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) {
                             return proj(t, nn::fully_connected(t, v[0], v[1], v[2]));
                           }));
  out.push_back(grad_check("flatten/add/concat/slice", {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) {
                             const int c = nn::concat_channels(t, nn::add(t, v[0], v[1]), v[1]);
                             const int b = nn::concat_batch(t, {c, nn::slice_batch(t, c, 1, 1)});
                             return proj(t, nn::flatten(t, b));
                           }));
  out.push_back(grad_check("linear_combination/sum_all", {random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) {
                             return nn::sum_all(t, nn::linear_combination(t, {{v[0], 0.7}, {v[1], -1.3}}), 0.25);
                           }));
  out.push_back(grad_check("l2_normalize_rows", {random_tensor({3, 5}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::l2_normalize_rows(t, v[0])); }));
  out.push_back(grad_check("cosine_rows", {random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::cosine_rows(t, v[0], v[1])); }));
  {
    // Keep every element away from the hinge kink at -margin.
    Tensor<double> x({6});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 ? 0.3 : -0.5) + rng.uniform(-0.1, 0.1);
    out.push_back(grad_check("hinge", {x}, [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::hinge(t, v[0], 0.1)); }));
  }
  out.push_back(grad_check("neg_log_half_cos", {random_tensor({5}, rng, -0.9, 0.9)},
                           [&](Tape<double>& t, const std::vector<int>& v) { return proj(t, nn::neg_log_half_cos(t, v[0])); }));
  {
    Tensor<double> u({2, 2});
    for (int i = 0; i < 2; ++i) {
      const double a = rng.uniform(0.1, 6.0);
      u[2 * i] = std::cos(a);
      u[2 * i + 1] = std::sin(a);
    }
    out.push_back(grad_check("spatial_transform", {random_tensor({2, 2, 7, 7}, rng), u},
                             [&](Tape<double>& t, const std::vector<int>& v) {
                               return proj(t, nn::spatial_transform(t, v[0], v[1]));
                             }));
    // In-plane loss graph: -log((1 + cos(T_u(V), T_gt(V))) / 2).
    const auto depth = random_tensor({2, 1, 9, 9}, rng, 0, 1);
    Tensor<double> gt({2, 2}, {1, 0, std::cos(0.4), std::sin(0.4)});
    out.push_back(grad_check("inplane loss", {u}, [&](Tape<double>& t, const std::vector<int>& v) {
      const int d = t.constant(depth);
      const int a = nn::flatten(t, nn::spatial_transform(t, d, v[0]));
      const int b = nn::flatten(t, nn::spatial_transform(t, d, t.constant(gt)));
      return nn::sum_all(t, nn::neg_log_half_cos(t, nn::cosine_rows(t, a, b)));
    }));
  }
  out.push_back(grad_check("viewpoint loss", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) {
                             const int st = nn::cosine_rows(t, v[0], v[1]);
                             const int sg = nn::cosine_rows(t, v[0], v[2]);
                             const int d = nn::linear_combination(t, {{sg, 1.0}, {st, -1.0}});
                             return nn::sum_all(t, nn::hinge(t, d, 0.1));
                           }));
  out.push_back(grad_check("verification loss", {random_tensor({4, 1}, rng), random_tensor({4, 1}, rng)},
                           [&](Tape<double>& t, const std::vector<int>& v) {
                             const int d = nn::linear_combination(t, {{v[1], 1.0}, {v[0], -1.0}});
                             return nn::sum_all(t, nn::hinge(t, d, 0.1));
                           }));
  {
    // Training loss of a micro network, differentiated with respect to every parameter.
    NetworkConfig cfg;
    cfg.input_size = 12;
    cfg.channels = {3, 3, 4};
    cfg.strides = {2, 1, 2};
    cfg.embedding_dim = 4;
    cfg.ove_channels = 4;
    cfg.ior_channels = 3;
    cfg.ior_hidden = 5;
    cfg.ocv_channels = 3;
    const Network<double> net(cfg, seed);
    TripletBatch<double> batch;
    const int b = 2, s = cfg.input_size;
    batch.v = random_tensor({b, 1, s, s}, rng);
    batch.v_theta = random_tensor({b, 1, s, s}, rng);
    batch.v_gamma = random_tensor({b, 1, s, s}, rng);
    batch.v_depth = random_tensor({b, 1, s, s}, rng, 0, 1);
    batch.theta = Tensor<double>({b, 2}, {std::cos(1.0), std::sin(1.0), std::cos(-2.0), std::sin(-2.0)});
    std::vector<Tensor<double>> params;
    for (std::size_t i = 0; i < net.parameter_names().size(); ++i) params.push_back(net.parameter(i));
    out.push_back(grad_check("training loss (micro network)", params, [&](Tape<double>& t, const std::vector<int>& v) {
      Pass<double> pass(net, t, true, v);
      return build_training_loss(pass, batch, 0.5, nullptr);
    }));
  }
  return out;
}

DepthFrame ray_cast_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr) {
  std::vector<Vec3> cam;
  for (const auto& v : mesh.vertices) cam.push_back(pose.apply(v));
  DepthFrame out(intr);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const Vec3 d = intr.back_project(x, y, 1.0).normalized();
      double best = std::numeric_limits<double>::infinity();
      for (const auto& f : mesh.faces) {
        const Vec3 &a = cam[static_cast<std::size_t>(f[0])], &b = cam[static_cast<std::size_t>(f[1])],
                   &c = cam[static_cast<std::size_t>(f[2])];
        if (a.z() < kNearClipMm || b.z() < kNearClipMm || c.z() < kNearClipMm) continue;
        const Vec3 e1 = b - a, e2 = c - a;
        const Vec3 n = e1.cross(e2);
        if (n.dot(a) >= 0) continue;  // back face
        const Vec3 p = d.cross(e2);
        const double det = e1.dot(p);
        if (std::abs(det) < 1e-14) continue;
        const double inv = 1.0 / det;
        const double u = -a.dot(p) * inv;
        if (u < 0 || u > 1) continue;
        const Vec3 q = (-a).cross(e1);
        const double v = d.dot(q) * inv;
        if (v < 0 || u + v > 1) continue;
        const double t = e2.dot(q) * inv;
        if (t > 0) best = std::min(best, t * d.z());
      }
      if (std::isfinite(best) && best <= kFarClipMm) out.at(x, y) = static_cast<float>(best);
    }
  return out;
}

std::vector<SelftestCheck> run_selftest(std::uint64_t seed) {
  std::vector<SelftestCheck> checks;
  for (const auto& g : gradient_suite(seed)) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "rel err %.2e", g.max_rel_err);
    checks.push_back({"gradient: " + g.name, g.pass, buf});
  }

  // Rasterizer against the ray-casting oracle.
  const ShapeSpec spec = generate_shape_specs(5, seed).back();
  const TriangleMesh mesh = generate_shape(spec, 8);
  CameraIntrinsics k;
  k.fx = k.fy = 150;
  k.px = k.py = 31.5;
  k.width = k.height = 64;
  CounterRng rng(seed, CounterRng::hash("selftest-pose"));
  const Pose pose{random_rotation(rng), Vec3(0, 0, 3.0 * spec.diameter)};
  const DepthFrame raster = render_depth(mesh, pose, k);
  const DepthFrame oracle = ray_cast_depth(mesh, pose, k);
  std::size_t both = 0, coverage_diff = 0, depth_bad = 0;
  for (std::size_t i = 0; i < raster.depth.size(); ++i) {
    const bool a = raster.depth[i] > 0, b = oracle.depth[i] > 0;
    if (a && b) {
      ++both;
      if (std::abs(raster.depth[i] - oracle.depth[i]) > 1e-3 * oracle.depth[i]) ++depth_bad;
    } else if (a != b) {
      ++coverage_diff;
    }
  }
  checks.push_back({"render: depth matches ray casting", both > 100 && depth_bad == 0,
                    std::to_string(depth_bad) + " of " + std::to_string(both) + " pixels differ"});
  checks.push_back({"render: coverage matches ray casting", coverage_diff * 50 <= both,
                    std::to_string(coverage_diff) + " edge pixels differ"});

  // Codebook and checkpoint round trips.
  const auto dir = std::filesystem::temp_directory_path() / ("ove6d-selftest-" + std::to_string(seed));
  std::filesystem::create_directories(dir);
  NetworkConfig small;
  small.channels = {4, 4, 8, 8};
  small.strides = {2, 2, 2, 2};
  small.ove_channels = 8;
  small.ior_channels = 4;
  small.ior_hidden = 8;
  small.ocv_channels = 4;
  const Network<float> net(small, seed);
  try {
    const ViewpointCodebook cb = build_codebook(net, mesh, 16, 5.0, spec.diameter);
    save_codebook(cb, dir / "cb.ovcb");
    const ViewpointCodebook back = load_codebook(dir / "cb.ovcb");
    bool same = back.object_id == cb.object_id && back.embeddings == cb.embeddings && back.size() == cb.size();
    for (int i = 0; same && i < cb.size(); ++i)
      same = back.rotations[static_cast<std::size_t>(i)].matrix() == cb.rotations[static_cast<std::size_t>(i)].matrix();
    checks.push_back({"codebook: save/load round trip", same, ""});
    save_network(net, dir / "net.ovck");
    const Network<float> net2 = load_network(dir / "net.ovck");
    bool eq = net2.parameter_names() == net.parameter_names();
    for (std::size_t i = 0; eq && i < net.parameter_names().size(); ++i)
      eq = net2.parameter(i).storage() == net.parameter(i).storage();
    checks.push_back({"checkpoint: save/load round trip", eq, ""});
  } catch (const Error& e) {
    checks.push_back({"round trips", false, e.what()});
  }
  std::filesystem::remove_all(dir);
  return checks;
}

}  // namespace ove6d
