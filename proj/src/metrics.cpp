#include "ove6d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/kdtree.hpp"
#include "ove6d/parallel.hpp"
#include "ove6d/rng.hpp"

namespace ove6d {

double add_error(const std::vector<Vec3>& pts, const Pose& gt, const Pose& est) {
  if (pts.empty()) throw InvalidArgument("ADD needs model points");
  double sum = 0;
  for (const auto& p : pts) sum += (gt.apply(p) - est.apply(p)).norm();
  return sum / static_cast<double>(pts.size());
}

double adds_error(const std::vector<Vec3>& pts, const Pose& gt, const Pose& est) {
  if (pts.empty()) throw InvalidArgument("ADD-S needs model points");
  std::vector<Vec3> g;
  g.reserve(pts.size());
  for (const auto& p : pts) g.push_back(gt.apply(p));
  const KdTree tree(std::move(g));
  double sum = 0;
  for (const auto& p : pts) sum += std::sqrt(tree.nearest(est.apply(p)).dist2);
  return sum / static_cast<double>(pts.size());
}

void score_record(EvalRecord& r, const std::vector<Vec3>& pts) {
  if (!(r.diameter > 0)) throw InvalidArgument("record diameter must be positive");
  r.error = r.symmetric ? adds_error(pts, r.pose_gt, r.pose_est) : add_error(pts, r.pose_gt, r.pose_est);
}

double add_recall(const std::vector<EvalRecord>& records, double frac) {
  if (records.empty()) throw InvalidArgument("recall of an empty record set");
  int hit = 0;
  for (const auto& r : records) hit += r.error < frac * r.diameter;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

double vsd_error(const DepthFrame& scene, const TriangleMesh& mesh, const Pose& gt, const Pose& est, double tau,
                 double delta) {
  const DepthFrame dg = render_depth(mesh, gt, scene.intrinsics);
  const DepthFrame de = render_depth(mesh, est, scene.intrinsics);
  auto visible = [&](float d, float s) { return d > 0 && (s <= 0 || d - s <= delta); };
  std::size_t uni = 0, cost = 0;
  for (std::size_t i = 0; i < scene.depth.size(); ++i) {
    const bool vg = visible(dg.depth[i], scene.depth[i]);
    const bool ve = visible(de.depth[i], scene.depth[i]);
    if (!vg && !ve) continue;
    ++uni;
    if (vg != ve || std::abs(static_cast<double>(dg.depth[i]) - de.depth[i]) > tau) ++cost;
  }
  if (uni == 0) throw InvalidArgument("VSD: neither pose is visible in the scene");
  return static_cast<double>(cost) / static_cast<double>(uni);
}

double vsd_recall(const std::vector<double>& errors, double e_max) {
  if (errors.empty()) throw InvalidArgument("recall of an empty error set");
  return static_cast<double>(std::count_if(errors.begin(), errors.end(), [&](double e) { return e < e_max; })) /
         static_cast<double>(errors.size());
}

CameraIntrinsics eval_intrinsics() {
  CameraIntrinsics k;
  k.fx = 572.4114;
  k.fy = 573.57043;
  k.px = 325.2611;
  k.py = 242.04899;
  k.width = 640;
  k.height = 480;
  return k;
}

EvalScene make_eval_scene(const TriangleMesh& mesh, double diameter, std::uint64_t seed, const CameraIntrinsics& intr) {
  CounterRng rng(seed, CounterRng::hash("eval-scene"));
  EvalScene s;
  s.object_id = mesh.object_id;
  s.pose_gt.rotation = random_rotation(rng);
  const double z = rng.uniform(4.0, 8.0) * diameter;
  const double u = rng.uniform(0.25, 0.75) * intr.width, v = rng.uniform(0.25, 0.75) * intr.height;
  s.pose_gt.translation = intr.back_project(u, v, z);
  s.depth = render_depth(mesh, s.pose_gt, intr);
  s.mask = mask_from_depth(s.depth);
  return s;
}

void occlude(EvalScene& scene, double fraction, std::uint64_t seed) {
  if (fraction <= 0) return;
  CounterRng rng(seed, CounterRng::hash("occlude"));
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec2 dir(std::cos(a), std::sin(a));
  std::vector<std::pair<double, std::size_t>> proj;
  for (int v = 0; v < scene.mask.height; ++v)
    for (int u = 0; u < scene.mask.width; ++u)
      if (scene.mask.at(u, v)) proj.emplace_back(dir.dot(Vec2(u, v)), static_cast<std::size_t>(v) * scene.mask.width + u);
  std::sort(proj.begin(), proj.end(), [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
  const auto cut = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(proj.size())));
  for (std::size_t i = 0; i < cut && i < proj.size(); ++i) {
    scene.mask.bits[proj[i].second] = 0;
    scene.depth.depth[proj[i].second] = 0.0f;
  }
}

double viewpoint_error_deg(const Rotation& est, const Rotation& gt) { return view_angle(est, gt); }

double inplane_error_deg(const Rotation& est, const Rotation& gt) {
  const double a = inplane_angle(decompose_rotation(est).r_theta);
  const double b = inplane_angle(decompose_rotation(gt).r_theta);
  double d = std::fmod(std::abs(rad2deg(a - b)), 360.0);
  return d > 180 ? 360 - d : d;
}

std::vector<SceneResult> evaluate_scenes(const Network<float>& net, const CodebookRegistry& registry,
                                         const std::vector<EvalScene>& scenes, const EstimateConfig& cfg) {
  std::vector<SceneResult> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    const auto entry = registry.find(s.object_id);
    SceneResult r;
    r.object_id = s.object_id;
    r.diameter = entry->codebook.diameter;
    r.symmetric = entry->symmetric;
    try {
      const EstimateResult e = estimate_pose(net, *entry, s.depth, s.mask, cfg);
      EvalRecord rec{s.object_id, s.pose_gt, e.best.pose(), r.diameter, r.symmetric, 0};
      score_record(rec, entry->mesh.vertices);
      r.add = rec.error;
      r.viewpoint_deg = viewpoint_error_deg(e.best.rotation, s.pose_gt.rotation);
      r.inplane_deg = inplane_error_deg(e.best.rotation, s.pose_gt.rotation);
      r.translation_mm = (e.best.translation - s.pose_gt.translation).norm();
      r.t_init_mm = (e.t_init - s.pose_gt.translation).norm();
      r.q = e.best.quality_q;
      r.total_ms = e.timings.total_ms;
      r.pose_est = e.best.pose();
    } catch (const Error&) {
      r.failed = true;
      r.add = std::numeric_limits<double>::infinity();
    }
    out.push_back(r);
  }
  return out;
}

double recall_of(const std::vector<SceneResult>& results, double frac) {
  if (results.empty()) throw InvalidArgument("recall of an empty result set");
  int hit = 0;
  for (const auto& r : results) hit += !r.failed && r.add < frac * r.diameter;
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

std::vector<PrecisionCurve> precision_curves(const std::vector<SceneResult>& results) {
  auto curve = [&](const std::string& name, double step, int count, auto value) {
    PrecisionCurve c{name, {}, {}};
    for (int i = 1; i <= count; ++i) {
      const double t = step * i;
      int hit = 0;
      for (const auto& r : results) hit += !r.failed && value(r) < t;
      c.thresholds.push_back(t);
      c.precision.push_back(results.empty() ? 0 : static_cast<double>(hit) / static_cast<double>(results.size()));
    }
    return c;
  };
  return {curve("viewpoint_deg", 2.5, 12, [](const SceneResult& r) { return r.viewpoint_deg; }),
          curve("inplane_deg", 2.5, 12, [](const SceneResult& r) { return r.inplane_deg; }),
          curve("translation_mm", 2.0, 20, [](const SceneResult& r) { return r.translation_mm; }),
          curve("t_init_mm", 2.0, 20, [](const SceneResult& r) { return r.t_init_mm; })};
}

double AblationReport::recall(const std::string& parameter, int value) const {
  for (const auto& r : rows) {
    const int v = parameter == "N" ? r.n : parameter == "K" ? r.k : r.p;
    if (r.parameter == parameter && v == value) return r.recall;
  }
  throw InvalidArgument("no ablation row for " + parameter + "=" + std::to_string(value));
}

std::string AblationReport::table() const {
  std::ostringstream os;
  os << "param     N     K     P  recall  mean_ms\n";
  for (const auto& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%-5s %5d %5d %5d  %6.3f  %7.1f\n", r.parameter.c_str(), r.n, r.k, r.p, r.recall,
                  r.mean_ms);
    os << line;
  }
  return os.str();
}

void AblationReport::write_csv(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream a(dir / "ablation.csv");
  a << "parameter,n,k,p,recall,mean_ms\n";
  for (const auto& r : rows) a << r.parameter << ',' << r.n << ',' << r.k << ',' << r.p << ',' << r.recall << ',' << r.mean_ms << '\n';
  std::ofstream s(dir / "records.csv");
  s << "object_id,failed,symmetric,add_mm,diameter_mm,viewpoint_deg,inplane_deg,translation_mm,t_init_mm,q,total_ms\n";
  for (const auto& r : base)
    s << r.object_id << ',' << r.failed << ',' << r.symmetric << ',' << r.add << ',' << r.diameter << ','
      << r.viewpoint_deg << ',' << r.inplane_deg << ',' << r.translation_mm << ',' << r.t_init_mm << ',' << r.q << ','
      << r.total_ms << '\n';
  std::ofstream c(dir / "precision_curves.csv");
  c << "quantity,threshold,precision\n";
  for (const auto& pc : curves)
    for (std::size_t i = 0; i < pc.thresholds.size(); ++i)
      c << pc.quantity << ',' << pc.thresholds[i] << ',' << pc.precision[i] << '\n';
  if (!a || !s || !c) throw DataError("cannot write ablation report to " + dir.string());
}

AblationReport ablation_harness(const Network<float>& net, const std::map<int, const CodebookRegistry*>& by_n,
                                const std::vector<EvalScene>& scenes, const AblationSweep& sweep,
                                const EstimateConfig& base) {
  base.validate();
  AblationReport rep;
  std::map<std::tuple<int, int, int>, std::pair<double, double>> cache;
  auto run = [&](int n, int k, int p) -> std::pair<double, double> {
    const auto key = std::make_tuple(n, k, p);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto reg = by_n.find(n);
    if (reg == by_n.end()) throw InvalidArgument("no codebooks with N=" + std::to_string(n));
    EstimateConfig cfg = base;
    cfg.n_views = n;
    cfg.k_retrieval = k;
    cfg.p_proposals = p;
    const auto res = evaluate_scenes(net, *reg->second, scenes, cfg);
    double ms = 0;
    for (const auto& r : res) ms += r.total_ms;
    const std::pair<double, double> out{recall_of(res), ms / static_cast<double>(std::max<std::size_t>(1, res.size()))};
    if (n == base.n_views && k == base.k_retrieval && p == base.p_proposals) {
      rep.base = res;
      rep.curves = precision_curves(res);
    }
    cache[key] = out;
    return out;
  };
  for (int n : sweep.n) {
    const auto [r, ms] = run(n, std::min(base.k_retrieval, n), std::min(base.p_proposals, n));
    rep.rows.push_back({"N", n, std::min(base.k_retrieval, n), std::min(base.p_proposals, n), r, ms});
  }
  for (int k : sweep.k) {
    const int p = std::min(base.p_proposals, k);
    const auto [r, ms] = run(base.n_views, k, p);
    rep.rows.push_back({"K", base.n_views, k, p, r, ms});
  }
  for (int p : sweep.p) {
    const int k = std::max(base.k_retrieval, p);
    const auto [r, ms] = run(base.n_views, k, p);
    rep.rows.push_back({"P", base.n_views, k, p, r, ms});
  }
  if (rep.base.empty()) run(base.n_views, base.k_retrieval, base.p_proposals);
  return rep;
}

}  // namespace ove6d
