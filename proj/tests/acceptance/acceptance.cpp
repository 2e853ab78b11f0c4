// Runs the ten acceptance criteria against the toy workspace produced by the CLI fixtures
// (gen-data, train, build-codebook) and prints one PASS/FAIL line per criterion.
#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "ove6d/cli.hpp"
#include "ove6d/codebook.hpp"
#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/metrics.hpp"
#include "ove6d/mesh_io.hpp"
#include "ove6d/parallel.hpp"
#include "ove6d/pipeline.hpp"
#include "ove6d/preprocess.hpp"
#include "ove6d/selftest.hpp"
#include "ove6d/train.hpp"

using namespace ove6d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

/// The trained toy workspace: network, meshes, codebooks and the evaluation scenes.
struct Workspace {
  fs::path root;
  RunConfig cfg;
  Network<float> net;
  CodebookRegistry registry;
  std::map<std::string, TriangleMesh> meshes;
  std::map<std::string, double> diameters;
  std::map<std::string, bool> symmetric;
  std::map<std::string, ShapeFamily> family;
  std::vector<EvalScene> scenes;

  explicit Workspace(const fs::path& dir) : root(dir) {
    std::ifstream c(dir / "train" / "config.json");
    if (!c) throw DataError("no trained workspace in " + dir.string());
    cfg = RunConfig::from_json(json::parse(c));
    net = load_network(dir / "train" / "network.ovck");
    const Manifest man = load_manifest(dir / "data" / "manifest.json");
    for (const auto& e : man.objects) {
      if (e.split != "train") continue;
      TriangleMesh m = load_mesh(dir / "data" / e.mesh_path);
      m.object_id = e.object_id;
      ViewpointCodebook cb = load_codebook(dir / "codebooks" / (e.object_id + ".ovcb"));
      meshes[e.object_id] = m;
      diameters[e.object_id] = cb.diameter;
      symmetric[e.object_id] = family_is_symmetric(e.family);
      family[e.object_id] = e.family;
      registry.add(std::move(cb), m, family_is_symmetric(e.family));
    }
    for (auto& s : load_scenes(dir / "data" / "scenes")) scenes.push_back(std::move(s.scene));
  }

  std::vector<TrainObject> train_objects() const {
    std::vector<TrainObject> out;
    for (const auto& [id, m] : meshes) out.push_back({m, diameters.at(id)});
    return out;
  }
};

Outcome ac1_sampling() {
  const auto t0 = Clock::now();
  auto brute = [](int n) {
    const auto views = sample_viewpoints(n);
    std::vector<Vec3> d;
    for (const auto& r : views) d.push_back(r.view_direction());
    double sum = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double best = -2;
      for (std::size_t j = 0; j < d.size(); ++j)
        if (i != j) best = std::max(best, d[i].dot(d[j]));
      sum += rad2deg(std::acos(std::clamp(best, -1.0, 1.0)));
    }
    return sum / n;
  };
  const double a4000 = brute(4000), a1000 = brute(1000);
  const double secs = seconds_since(t0);
  return {std::abs(a4000 - 3.1) <= 0.6 && std::abs(a1000 - 6.1) <= 1.2 && secs < 30,
          fmt("AAVD N=4000 %.3f deg (3.1 +- 0.6), N=1000 %.3f deg (6.1 +- 1.2), %.1f s (< 30 s)", a4000, a1000, secs)};
}

Outcome ac2_gradients() {
  const auto t0 = Clock::now();
  const auto res = gradient_suite(2024);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : res) {
    if (r.max_rel_err > worst) worst = r.max_rel_err, worst_name = r.name;
    if (!r.pass) failed += " " + r.name;
  }
  return {failed.empty() && secs < 60,
          fmt("%zu checks, worst rel err %.2e (%s), %.1f s (< 60 s)%s", res.size(), worst, worst_name.c_str(), secs,
              failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome ac3_training(const Workspace& ws) {
  double train_secs = 0;
  {
    std::ifstream f(ws.root / "train" / "loss.csv");
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) train_secs += std::stod(line.substr(line.rfind(',') + 1));
  }
  const HeldOutReport rep = evaluate_held_out(ws.net, ws.train_objects(), 10, 0xacc3, 15.0);
  std::vector<double> e = rep.inplane_errors;
  const double at10 = static_cast<double>(std::count_if(e.begin(), e.end(), [](double x) { return x < 10; })) / e.size();
  return {rep.ranking_accuracy >= 0.90 && rep.inplane_median < 10.0 && train_secs <= 7200,
          fmt("%d held-out triplets: ranking %.3f (>= 0.90), in-plane median %.2f deg (< 10), %.0f%% < 10 deg; "
              "training %.1f min (<= 120)",
              rep.triplets, rep.ranking_accuracy, rep.inplane_median, 100 * at10, train_secs / 60)};
}

struct CascadeRuns {
  std::vector<SceneResult> icp, no_icp;
  AblationReport ablation;
  double icp_secs = 0;
};

Outcome ac4_closed_loop(const Workspace& ws, CascadeRuns& runs) {
  EstimateConfig cfg = ws.cfg.estimate;
  cfg.k_retrieval = 50, cfg.p_proposals = 5, cfg.icp = IcpMode::AfterSelection;
  const auto t0 = Clock::now();
  runs.icp = evaluate_scenes(ws.net, ws.registry, ws.scenes, cfg);
  runs.icp_secs = seconds_since(t0);
  cfg.icp = IcpMode::Off;
  runs.no_icp = evaluate_scenes(ws.net, ws.registry, ws.scenes, cfg);
  const double r_icp = recall_of(runs.icp), r_raw = recall_of(runs.no_icp);
  const int n = ws.registry.find(ws.scenes.front().object_id)->codebook.size();
  return {n == 4000 && ws.scenes.size() == 100 && r_icp >= 0.80 && r_raw >= 0.60 && runs.icp_secs < 600,
          fmt("%zu scenes, N=%d K=50 P=5: ADD(-S)@0.1d %.2f with ICP (>= 0.80), %.2f without (>= 0.60); %.1f s (< 600)",
              ws.scenes.size(), n, r_icp, r_raw, runs.icp_secs)};
}

Outcome ac5_ablation(const Workspace& ws, CascadeRuns& runs) {
  std::map<int, CodebookRegistry> extra;
  std::map<int, const CodebookRegistry*> by_n{{4000, &ws.registry}};
  for (const auto& [id, m] : ws.meshes)
    extra[1000].add(build_codebook(ws.net, m, 1000, ws.cfg.codebook.f_base), m, ws.symmetric.at(id));
  by_n[1000] = &extra[1000];
  EstimateConfig base = ws.cfg.estimate;
  base.n_views = 4000, base.k_retrieval = 50, base.p_proposals = 5, base.icp = IcpMode::Off;
  runs.ablation = ablation_harness(ws.net, by_n, ws.scenes, AblationSweep{}, base);
  const auto& a = runs.ablation;
  const double n1 = a.recall("N", 1000), n4 = a.recall("N", 4000), k1 = a.recall("K", 1), k50 = a.recall("K", 50),
               p1 = a.recall("P", 1), p5 = a.recall("P", 5);
  a.write_csv(ws.root / "acceptance");
  return {n4 >= n1 && k50 >= k1 && p5 >= p1,
          fmt("no ICP: N 1000/4000 %.2f/%.2f, K 1/50 %.2f/%.2f, P 1/5 %.2f/%.2f", n1, n4, k1, k50, p1, p5)};
}

std::vector<EvalScene> asymmetric_scenes(const Workspace& ws, int count, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& [id, sym] : ws.symmetric)
    if (!sym) ids.push_back(id);
  if (ids.empty()) throw DataError("no asymmetric shapes in the workspace");
  std::vector<EvalScene> out;
  for (int i = 0; i < count; ++i) {
    const std::string& id = ids[static_cast<std::size_t>(i) % ids.size()];
    EvalScene s = make_eval_scene(ws.meshes.at(id), ws.diameters.at(id), CounterRng(seed, static_cast<std::uint64_t>(i)).next_u64());
    s.object_id = id;
    out.push_back(std::move(s));
  }
  return out;
}

Outcome ac6_location(const Workspace& ws) {
  const auto scenes = asymmetric_scenes(ws, 100, 0xac6);
  EstimateConfig cfg = ws.cfg.estimate;
  cfg.icp = IcpMode::Off;
  const auto res = evaluate_scenes(ws.net, ws.registry, scenes, cfg);
  int closer = 0, init10 = 0, est10 = 0;
  for (const auto& r : res) {
    if (r.failed) continue;
    closer += r.translation_mm < r.t_init_mm;
    init10 += r.t_init_mm < 10;
    est10 += r.translation_mm < 10;
  }
  const double n = static_cast<double>(res.size());
  return {closer / n >= 0.90 && (est10 - init10) / n >= 0.30,
          fmt("%zu asymmetric trials: closer than t_init in %.0f%% (>= 90%%); precision@10mm %.0f%% -> %.0f%% (+%.0f pp, >= 30)",
              res.size(), 100 * closer / n, 100 * init10 / n, 100 * est10 / n, 100 * (est10 - init10) / n)};
}

Outcome ac7_oracle(const Workspace& ws) {
  CounterRng rng(0xac7, 0);
  int chosen = 0;
  const int trials = 100;
  double worst_margin = 1;
  for (int t = 0; t < trials; ++t) {
    const EvalScene& s = ws.scenes[static_cast<std::size_t>(t) % ws.scenes.size()];
    const auto& mesh = ws.meshes.at(s.object_id);
    const double d = ws.diameters.at(s.object_id);
    const DepthFrame obs = apply_mask(s.depth, s.mask);
    std::vector<PoseHypothesis> hyps;
    // Two rotation-only and two translation-only perturbations at the minimum size; the true
    // pose goes last so that every tie-break works against it.
    for (int k = 0; k < 4; ++k) {
      Pose p = s.pose_gt;
      if (k < 2) p.rotation = Rotation::about_axis(random_unit(rng), deg2rad(5.0)) * p.rotation;
      else p.translation += random_unit(rng) * 0.05 * d;
      PoseHypothesis h{p.rotation, p.translation};
      h.quality_q = hypothesis_quality(mesh, p, obs, d).q;
      h.source_rank = k;
      hyps.push_back(h);
    }
    PoseHypothesis gt{s.pose_gt.rotation, s.pose_gt.translation};
    gt.quality_q = hypothesis_quality(mesh, s.pose_gt, obs, d).q;
    gt.source_rank = 4;
    hyps.push_back(gt);
    double best_other = 1;
    for (int k = 0; k < 4; ++k) best_other = std::min(best_other, hyps[static_cast<std::size_t>(k)].quality_q);
    worst_margin = std::min(worst_margin, best_other - gt.quality_q);
    chosen += select_hypothesis(hyps) == 4;
  }
  return {chosen == trials, fmt("ground truth selected %d/%d; smallest q gap to a perturbed pose %.4f", chosen, trials, worst_margin)};
}

/// Area-uniform random points on the mesh surface.
std::vector<Vec3> surface_samples(const TriangleMesh& m, int n, CounterRng& rng) {
  std::vector<double> cum;
  double total = 0;
  for (const auto& f : m.faces) {
    const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &c = m.vertices[f[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum.push_back(total);
  }
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), rng.uniform() * total) - cum.begin());
    const auto& f = m.faces[std::min(k, m.faces.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1) u = 1 - u, v = 1 - v;
    const Vec3& a = m.vertices[f[0]];
    out.push_back(a + u * (m.vertices[f[1]] - a) + v * (m.vertices[f[2]] - a));
  }
  return out;
}

Outcome ac8_icp(const Workspace& ws) {
  // Noise-free clouds: 5000 surface samples of an asymmetric shape, seen whole in the true pose. A
  // regular vertex grid is avoided because rotating it by one cell nearly maps it onto itself.
  // The visible half of the same cloud is reported alongside; single views of some shapes leave a
  // rotation barely constrained.
  CounterRng rng(0xac8, 0);
  int ok = 0, monotone = 0, trials = 0, partial_ok = 0;
  double worst_t = 0, worst_r = 0;
  for (const auto& [id, sym] : ws.symmetric) {
    if (sym) continue;
    const auto& mesh = ws.meshes.at(id);
    const auto model = surface_samples(mesh, 5000, rng);
    const KdTree tree(model);
    for (int t = 0; t < 10; ++t) {
      const EvalScene s = make_eval_scene(mesh, ws.diameters.at(id), rng.next_u64());
      std::vector<Vec3> whole, visible;
      for (const auto& p : model) {
        const Vec3 c = s.pose_gt.apply(p);
        whole.push_back(c);
        const Vec2 px = s.depth.intrinsics.project(c);
        const int u = static_cast<int>(px.x()), v = static_cast<int>(px.y());
        if (u >= 0 && v >= 0 && u < s.depth.width && v < s.depth.height && std::abs(s.depth.at(u, v) - c.z()) < 2.0)
          visible.push_back(c);
      }
      const Pose init{Rotation::about_axis(random_unit(rng), deg2rad(5.0)) * s.pose_gt.rotation,
                      s.pose_gt.translation + random_unit(rng) * 10.0};
      auto converged = [&](const IcpResult& r, double& te, double& re) {
        te = (r.pose.translation - s.pose_gt.translation).norm();
        re = geodesic_angle(r.pose.rotation, s.pose_gt.rotation);
        return te < 1.0 && re < 0.5;
      };
      for (const auto* cloud : {&whole, &visible}) {
        const IcpResult r = icp_refine(tree, *cloud, init, 100, 1e-6);
        double te = 0, re = 0;
        const bool hit = converged(r, te, re);
        bool mono = true;
        for (std::size_t i = 1; i < r.rms_history.size(); ++i) mono = mono && r.rms_history[i] <= r.rms_history[i - 1];
        monotone += mono;
        if (cloud == &visible) {
          partial_ok += hit;
          continue;
        }
        worst_t = std::max(worst_t, te), worst_r = std::max(worst_r, re);
        ok += hit;
        ++trials;
      }
    }
  }
  return {ok == trials && monotone == 2 * trials,
          fmt("%d whole-cloud trials from 5 deg / 10 mm: %d converged (< 1 mm, < 0.5 deg; worst %.4f mm, %.4f deg); "
              "%d/%d RMS histories monotone; visible half only: %d/%d converged",
              trials, ok, worst_t, worst_r, monotone, 2 * trials, partial_ok, trials)};
}

/// Angle between two object-frame view directions, up to the symmetries of the shape family.
/// Single primitives sit axis-aligned at the origin: boxes and (super)ellipsoids keep the half
/// turns about x, y and z, cylinders any turn about z and the half turn about x.
double view_angle_mod_symmetry(ShapeFamily f, const Vec3& a, const Vec3& b) {
  auto angle = [](const Vec3& u, const Vec3& v) { return rad2deg(std::acos(std::clamp(u.dot(v), -1.0, 1.0))); };
  if (f == ShapeFamily::Union) return angle(a, b);
  if (f == ShapeFamily::Cylinder) {
    const Vec2 pa(std::hypot(a.x(), a.y()), std::abs(a.z())), pb(std::hypot(b.x(), b.y()), std::abs(b.z()));
    return rad2deg(std::acos(std::clamp(pa.dot(pb), -1.0, 1.0)));
  }
  double best = angle(a, b);
  for (const Vec3 s : {Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)}) best = std::min(best, angle(a, s.cwiseProduct(b)));
  return best;
}

/// Removes the given fraction of mask pixels nearest to a random mask pixel, in the max norm
/// (a square) or the Euclidean norm (a disc).
void occlude_compact(EvalScene& s, double fraction, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  std::vector<Vec2> px;
  for (int v = 0; v < s.mask.height; ++v)
    for (int u = 0; u < s.mask.width; ++u)
      if (s.mask.at(u, v)) px.emplace_back(u, v);
  const Vec2 c = px[rng.below(px.size())];
  const bool disc = rng.uniform() < 0.5;
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t k = 0; k < px.size(); ++k) {
    const Vec2 q = px[k] - c;
    d.emplace_back(disc ? q.norm() : q.cwiseAbs().maxCoeff(), k);
  }
  std::sort(d.begin(), d.end());
  const auto cut = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(px.size())));
  for (std::size_t k = 0; k < cut; ++k) {
    const Vec2& p = px[d[k].second];
    const std::size_t idx = static_cast<std::size_t>(p.y()) * static_cast<std::size_t>(s.mask.width) + static_cast<std::size_t>(p.x());
    s.mask.bits[idx] = 0;
    s.depth.depth[idx] = 0.0f;
  }
}

Outcome ac9_occlusion(const Workspace& ws) {
  // The gated occluder cuts the mask from one side along a straight edge; a compact occluder is
  // reported alongside. Rank-1 retrieval hit: the retrieved codebook viewpoint is within 15 degrees of the true one.
  // The crop sees the object along the ray through its center, so the true viewpoint is that ray
  // in object coordinates; in-plane rotation does not move it.
  auto accuracy = [&](double fraction, bool compact) {
    int hit = 0, n = 0;
    for (std::size_t i = 0; i < ws.scenes.size(); ++i) {
      EvalScene s = ws.scenes[i];
      if (fraction > 0 && compact) occlude_compact(s, fraction, 0xac9 + i);
      else if (fraction > 0) occlude(s, fraction, 0xac9 + i);
      const auto entry = ws.registry.find(s.object_id);
      ++n;
      try {
        const Crop c = preprocess(s.depth, s.mask, entry->codebook.diameter, ws.net.config().input_size);
        nn::Tensor<float> x({1, 1, c.size, c.size}, c.normalized);
        const Encoded e = encode(ws.net, x);
        const auto hits = retrieve(entry->codebook, e.embeddings.span(), 1);
        const Vec3 view = entry->codebook.rotations[static_cast<std::size_t>(hits[0].index)].view_direction();
        const Vec3 truth = s.pose_gt.rotation.matrix().transpose() * s.pose_gt.translation.normalized();
        hit += view_angle_mod_symmetry(ws.family.at(s.object_id), view, truth) < 15.0;
      } catch (const Error&) {
      }
    }
    return static_cast<double>(hit) / n;
  };
  const double base = accuracy(0, false);
  std::string detail = fmt("rank-1 viewpoint @15 deg: 0%% occlusion %.2f", base);
  double worst = 0;
  for (double f : {0.1, 0.2, 0.3}) {
    const double a = accuracy(f, false);
    worst = std::max(worst, base - a);
    detail += fmt(", %.0f%% %.2f", 100 * f, a);
  }
  detail += fmt("; largest drop %.1f pp (< 10)", 100 * worst);
  detail += "; square/disc occluder (not gated):";
  for (double f : {0.1, 0.2, 0.3}) detail += fmt(" %.0f%% %.2f", 100 * f, accuracy(f, true));
  return {worst < 0.10, detail};
}

Outcome ac10_determinism(const Workspace& ws) {
  const fs::path dir = ws.root / "acceptance" / "determinism";
  fs::create_directories(dir);
  std::string notes;
  bool ok = true;

  const auto& [id, mesh] = *ws.meshes.begin();
  const auto t0 = Clock::now();
  const ViewpointCodebook cb = build_codebook(ws.net, mesh, 4000, ws.cfg.codebook.f_base);
  const double build_secs = seconds_since(t0);
  save_codebook(cb, dir / "a.ovcb");
  save_codebook(load_codebook(dir / "a.ovcb"), dir / "b.ovcb");
  const bool cb_rt = file_bytes(dir / "a.ovcb") == file_bytes(dir / "b.ovcb");
  const ViewpointCodebook stored = load_codebook(ws.root / "codebooks" / (id + ".ovcb"));
  bool cb_rebuild = stored.embeddings == cb.embeddings && stored.rotations.size() == cb.rotations.size();
  for (std::size_t i = 0; cb_rebuild && i < cb.rotations.size(); ++i)
    cb_rebuild = stored.rotations[i].matrix() == cb.rotations[i].matrix();

  save_network(ws.net, dir / "a.ovck");
  save_network(load_network(dir / "a.ovck"), dir / "b.ovck");
  const bool ck_rt = file_bytes(dir / "a.ovck") == file_bytes(dir / "b.ovck") &&
                     file_bytes(dir / "a.ovck") == file_bytes(ws.root / "train" / "network.ovck");

  // Two fixed-seed training runs of the toy recipe, shortened to a few steps.
  TrainConfig tc = ws.cfg.train;
  tc.epochs = 1, tc.steps_per_epoch = 2;
  auto objs = ws.train_objects();
  const TrainResult r1 = train(objs, tc), r2 = train(objs, tc);
  save_network(r1.net, dir / "t1.ovck");
  save_network(r2.net, dir / "t2.ovck");
  const bool train_same = file_bytes(dir / "t1.ovck") == file_bytes(dir / "t2.ovck");

  const EvalScene& s = ws.scenes.front();
  const auto e1 = estimate_pose(ws.net, ws.registry, s.object_id, s.depth, s.mask, ws.cfg.estimate).to_json(s.object_id);
  const auto e2 = estimate_pose(ws.net, ws.registry, s.object_id, s.depth, s.mask, ws.cfg.estimate).to_json(s.object_id);
  auto strip = [](json j) {
    j.erase("timings_ms");
    return j.dump();
  };
  const bool est_same = strip(e1) == strip(e2);

  ok = cb_rt && cb_rebuild && ck_rt && train_same && est_same && build_secs <= 60;
  notes = fmt("codebook round trip %s, rebuild %s; checkpoint round trip %s; train rerun %s; estimate rerun %s; "
              "N=4000 build %.1f s (<= 60)",
              cb_rt ? "identical" : "DIFFERS", cb_rebuild ? "identical" : "DIFFERS", ck_rt ? "identical" : "DIFFERS",
              train_same ? "identical" : "DIFFERS", est_same ? "identical" : "DIFFERS", build_secs);
  fs::remove_all(dir);
  return {ok, notes};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  fs::path work;
  std::vector<int> only;
  unsigned threads = 0;
  app.add_option("--work", work, "toy workspace (data/, train/, codebooks/)")->required();
  app.add_option("--only", only, "criteria to run");
  app.add_option("--threads", threads, "worker threads");
  CLI11_PARSE(app, argc, argv);
  set_thread_count(threads);
  auto wanted = [&](int i) { return only.empty() || std::find(only.begin(), only.end(), i) != only.end(); };

  std::unique_ptr<Workspace> ws;
  auto workspace = [&]() -> const Workspace& {
    if (!ws) ws = std::make_unique<Workspace>(work);
    return *ws;
  };
  fs::create_directories(work / "acceptance");
  CascadeRuns runs;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"viewpoint sampling", ac1_sampling},
      {"gradient suite", ac2_gradients},
      {"toy training objective", [&] { return ac3_training(workspace()); }},
      {"closed-loop pose recovery", [&] { return ac4_closed_loop(workspace(), runs); }},
      {"ablation trends", [&] { return ac5_ablation(workspace(), runs); }},
      {"location refinement", [&] { return ac6_location(workspace()); }},
      {"oracle hypothesis dominance", [&] { return ac7_oracle(workspace()); }},
      {"ICP convergence", [&] { return ac8_icp(workspace()); }},
      {"occlusion robustness", [&] { return ac9_occlusion(workspace()); }},
      {"determinism and formats", [&] { return ac10_determinism(workspace()); }},
  };

  json summary = json::array();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "AC" << n << (n < 10 ? "  " : " ") << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << fmt(" [%.0f s]", seconds_since(t0)) << std::endl;
    summary.push_back({{"criterion", n}, {"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail}});
  }
  std::ofstream(work / "acceptance" / "summary.json") << summary.dump(2) << '\n';
  return failed == 0 ? 0 : 1;
}
