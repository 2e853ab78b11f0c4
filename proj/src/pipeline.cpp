#include "ove6d/pipeline.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ove6d/error.hpp"
#include "ove6d/parallel.hpp"
#include "ove6d/preprocess.hpp"

namespace ove6d {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

json mat_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

json hyp_json(const PoseHypothesis& h) {
  return {{"rotation", mat_json(h.rotation.matrix())},
          {"translation_mm", {h.translation.x(), h.translation.y(), h.translation.z()}},
          {"q", h.quality_q},
          {"degenerate", h.degenerate},
          {"verify_score", h.verify_score},
          {"source_rank", h.source_rank},
          {"record", h.record},
          {"inplane_deg", h.inplane_deg},
          {"icp_applied", h.icp_applied},
          {"icp_rms_mm", h.icp_rms}};
}

// Residuals of the closest model point for every scene point under `pose`.
double correspond(const KdTree& model, const std::vector<Vec3>& scene, const Pose& pose, std::vector<int>& match) {
  const Pose inv = pose.inverse();
  double sum = 0;
  match.resize(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const KdTree::Hit h = model.nearest(inv.apply(scene[i]));
    match[i] = h.index;
    sum += h.dist2;
  }
  return std::sqrt(sum / static_cast<double>(scene.size()));
}

bool degenerate_cloud(const std::vector<Vec3>& pts) {
  if (pts.size() < 3) return true;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov);
  const Vec3 s = svd.singularValues();
  return !(s(0) > 0) || s(1) <= 1e-12 * s(0);
}

}  // namespace

std::string icp_mode_name(IcpMode m) {
  switch (m) {
    case IcpMode::Off: return "off";
    case IcpMode::AfterSelection: return "after-selection";
    case IcpMode::BeforeSelection: return "before-selection";
  }
  return "off";
}

IcpMode icp_mode_from_name(const std::string& name) {
  if (name == "off") return IcpMode::Off;
  if (name == "after-selection") return IcpMode::AfterSelection;
  if (name == "before-selection") return IcpMode::BeforeSelection;
  throw ConfigError("unknown icp mode '" + name + "' (off, after-selection, before-selection)");
}

void EstimateConfig::validate() const {
  if (!(1 <= p_proposals && p_proposals <= k_retrieval && k_retrieval <= n_views))
    throw ConfigError("estimate needs 1 <= p <= k <= n, got p=" + std::to_string(p_proposals) +
                      " k=" + std::to_string(k_retrieval) + " n=" + std::to_string(n_views));
  if (n_views < 2) throw ConfigError("estimate.n_views must be at least 2");
  if (!(f_base > 0) || !(crop_scale > 0)) throw ConfigError("estimate.f_base and crop_scale must be positive");
  if (icp_max_iters < 0 || !(icp_tol_mm >= 0) || icp_max_points < 3) throw ConfigError("invalid ICP settings");
}

json EstimateConfig::to_json() const {
  return {{"n_views", n_views},
          {"k", k_retrieval},
          {"p", p_proposals},
          {"icp", icp_mode_name(icp)},
          {"f_base", f_base},
          {"unobserved_as_outlier", unobserved_as_outlier},
          {"ray_correction", ray_correction},
          {"crop_scale", crop_scale},
          {"icp_max_iters", icp_max_iters},
          {"icp_tol_mm", icp_tol_mm},
          {"icp_max_points", icp_max_points}};
}

EstimateConfig EstimateConfig::from_json(const json& j) {
  EstimateConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "n_views") c.n_views = it->get<int>();
      else if (k == "k") c.k_retrieval = it->get<int>();
      else if (k == "p") c.p_proposals = it->get<int>();
      else if (k == "icp") c.icp = icp_mode_from_name(it->get<std::string>());
      else if (k == "f_base") c.f_base = it->get<double>();
      else if (k == "unobserved_as_outlier") c.unobserved_as_outlier = it->get<bool>();
      else if (k == "ray_correction") c.ray_correction = it->get<bool>();
      else if (k == "crop_scale") c.crop_scale = it->get<double>();
      else if (k == "icp_max_iters") c.icp_max_iters = it->get<int>();
      else if (k == "icp_tol_mm") c.icp_tol_mm = it->get<double>();
      else if (k == "icp_max_points") c.icp_max_points = it->get<int>();
      else throw ConfigError("unknown estimate key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("estimate." + k + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

json StageTimings::to_json() const {
  return {{"preprocess", preprocess_ms}, {"encode", encode_ms}, {"retrieve", retrieve_ms},
          {"candidates", candidates_ms}, {"refine", refine_ms}, {"quality", quality_ms},
          {"icp", icp_ms},               {"total", total_ms}};
}

json EstimateResult::to_json(const std::string& object_id) const {
  json j = hyp_json(best);
  j["object_id"] = object_id;
  j["t_init_mm"] = {t_init.x(), t_init.y(), t_init.z()};
  j["timings_ms"] = timings.to_json();
  json hs = json::array();
  for (const auto& h : hypotheses) hs.push_back(hyp_json(h));
  j["hypotheses"] = hs;
  return j;
}

int select_hypothesis(const std::vector<PoseHypothesis>& hyps) {
  if (hyps.empty()) throw EstimationFailure("no hypotheses to select from");
  int best = 0;
  for (int i = 1; i < static_cast<int>(hyps.size()); ++i) {
    const auto& a = hyps[static_cast<std::size_t>(i)];
    const auto& b = hyps[static_cast<std::size_t>(best)];
    if (a.quality_q < b.quality_q ||
        (a.quality_q == b.quality_q &&
         (a.verify_score > b.verify_score || (a.verify_score == b.verify_score && a.source_rank < b.source_rank))))
      best = i;
  }
  return best;
}

Rotation ray_rotation(const Vec3& t) {
  const Vec3 z = Vec3::UnitZ();
  const Vec3 d = t.normalized();
  const Vec3 axis = z.cross(d);
  const double s = axis.norm();
  if (s < 1e-12) return Rotation();
  return Rotation::about_axis(axis / s, std::atan2(s, z.dot(d)));
}

DepthFrame apply_mask(const DepthFrame& depth, const MaskFrame& mask) {
  if (mask.width != depth.width || mask.height != depth.height) throw InvalidArgument("mask and depth sizes differ");
  DepthFrame out = depth;
  for (std::size_t i = 0; i < out.depth.size(); ++i)
    if (!mask.bits[i]) out.depth[i] = 0.0f;
  return out;
}

Vec3 refine_location(const TriangleMesh& mesh, const Rotation& r_est, const Vec3& t_init, const CameraIntrinsics& intr) {
  const DepthFrame syn = render_depth(mesh, Pose{r_est, t_init}, intr);
  const CenterEstimate c = estimate_center(syn, mask_from_depth(syn));
  return 2.0 * t_init - c.t_init;
}

QualityResult hypothesis_quality(const TriangleMesh& mesh, const Pose& pose, const DepthFrame& observed,
                                 double diameter, bool unobserved_as_outlier) {
  if (!(diameter > 0)) throw InvalidArgument("diameter must be positive");
  const DepthFrame syn = render_depth(mesh, pose, observed.intrinsics);
  const double thr = 0.1 * diameter;
  QualityResult r;
  for (std::size_t i = 0; i < syn.depth.size(); ++i) {
    const float s = syn.depth[i];
    if (!(s > 0)) continue;
    const float o = observed.depth[i];
    if (!(o > 0) && !unobserved_as_outlier) continue;
    ++r.pixels;
    if (std::abs(static_cast<double>(s) - (o > 0 ? o : 0.0)) > thr) ++r.outliers;
  }
  if (r.pixels == 0) {
    r.degenerate = true;
    r.q = 1;
  } else {
    r.q = static_cast<double>(r.outliers) / r.pixels;
  }
  return r;
}

Pose kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("kabsch needs matched non-empty point lists");
  Vec3 ma = Vec3::Zero(), mb = Vec3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) h += (a[i] - ma) * (b[i] - mb).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Rotation r = Rotation::project(v * d * u.transpose());
  return {r, mb - r.matrix() * ma};
}

IcpResult icp_refine(const KdTree& model, const std::vector<Vec3>& scene, const Pose& init, int max_iters,
                     double tol_mm) {
  IcpResult res;
  res.pose = init;
  if (model.points().size() < 3 || degenerate_cloud(scene) || degenerate_cloud(model.points())) {
    res.skipped = true;
    return res;
  }
  std::vector<int> match;
  double rms = correspond(model, scene, res.pose, match);
  res.rms_history.push_back(rms);
  std::vector<Vec3> src(scene.size());
  for (int it = 0; it < max_iters && rms > 0; ++it) {
    for (std::size_t i = 0; i < scene.size(); ++i) src[i] = model.points()[static_cast<std::size_t>(match[i])];
    const Pose next = kabsch(src, scene);
    std::vector<int> next_match;
    const double next_rms = correspond(model, scene, next, next_match);
    // A step that does not lower the residual is rejected.
    if (next_rms > rms) break;
    res.pose = next;
    match.swap(next_match);
    res.rms_history.push_back(next_rms);
    ++res.iterations;
    const double gain = rms - next_rms;
    rms = next_rms;
    if (gain < tol_mm) break;
  }
  res.rms = rms;
  return res;
}

IcpResult icp_refine(const std::vector<Vec3>& model_points, const std::vector<Vec3>& scene_points, const Pose& init,
                     int max_iters, double tol_mm) {
  if (model_points.size() < 3) {
    IcpResult r;
    r.pose = init;
    r.skipped = true;
    return r;
  }
  return icp_refine(KdTree(model_points), scene_points, init, max_iters, tol_mm);
}

std::vector<Vec3> mask_to_points(const DepthFrame& depth, const MaskFrame& mask) {
  if (mask.width != depth.width || mask.height != depth.height) throw InvalidArgument("mask and depth sizes differ");
  std::vector<Vec3> pts;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      if (mask.at(u, v) && z > 0 && std::isfinite(z)) pts.push_back(depth.intrinsics.back_project(u, v, z));
    }
  if (pts.empty()) throw NoObjectError("no valid masked depth to back-project");
  return pts;
}

std::vector<Vec3> subsample_points(const std::vector<Vec3>& points, int max_points) {
  if (max_points <= 0 || points.size() <= static_cast<std::size_t>(max_points)) return points;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(max_points));
  for (int i = 0; i < max_points; ++i)
    out.push_back(points[static_cast<std::size_t>(i) * points.size() / static_cast<std::size_t>(max_points)]);
  return out;
}

EstimateResult estimate_pose(const Network<float>& net, const CodebookRegistry::Entry& object, const DepthFrame& depth,
                             const MaskFrame& mask, const EstimateConfig& cfg) {
  cfg.validate();
  const ViewpointCodebook& cb = object.codebook;
  const int k = std::min(cfg.k_retrieval, cb.size());
  const int size = net.config().input_size;
  const std::size_t px = static_cast<std::size_t>(size) * size;
  EstimateResult res;
  const auto t_start = Clock::now();

  auto t0 = Clock::now();
  const Crop crop = preprocess(depth, mask, cb.diameter, size, cfg.crop_scale);
  const DepthFrame observed = apply_mask(depth, mask);
  res.t_init = crop.t_init;
  res.timings.preprocess_ms = ms_since(t0);

  t0 = Clock::now();
  nn::Tensor<float> obs_in({1, 1, size, size}, std::vector<float>(crop.normalized));
  const Encoded obs = encode(net, obs_in);
  res.timings.encode_ms = ms_since(t0);

  t0 = Clock::now();
  const auto hits = retrieve(cb, obs.embeddings.storage(), k);
  res.timings.retrieve_ms = ms_since(t0);

  // Candidate views: render, crop, encode, then in-plane regression and verification.
  t0 = Clock::now();
  std::vector<std::vector<float>> cand(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
    try {
      const Rotation& r = cb.rotations[static_cast<std::size_t>(hits[i].index)];
      const DepthFrame f = render_codebook_view(object.mesh, r, cb.f_base, cb.diameter);
      cand[i] = preprocess(f, mask_from_depth(f), cb.diameter, size, cfg.crop_scale).normalized;
    } catch (const DataError&) {
      cand[i].clear();
    }
  });
  std::vector<int> live;
  for (int i = 0; i < k; ++i)
    if (!cand[static_cast<std::size_t>(i)].empty()) live.push_back(i);
  if (live.empty()) throw EstimationFailure("no retrieved candidate of " + cb.object_id + " could be rendered");
  const int m = static_cast<int>(live.size());
  nn::Tensor<float> cand_in({m, 1, size, size});
  for (int i = 0; i < m; ++i)
    std::copy(cand[static_cast<std::size_t>(live[static_cast<std::size_t>(i)])].begin(),
              cand[static_cast<std::size_t>(live[static_cast<std::size_t>(i)])].end(), cand_in.data() + i * px);
  const Encoded ref = encode(net, cand_in);
  const std::size_t fsz = obs.features.size();
  std::vector<int> fshape = obs.features.shape();
  fshape[0] = m;
  nn::Tensor<float> obs_rep(fshape);
  for (int i = 0; i < m; ++i) std::copy(obs.features.data(), obs.features.data() + fsz, obs_rep.data() + i * fsz);
  const auto theta = regress_inplane(net, ref.features, obs_rep);
  const auto scores = verify_score(net, ref.features, obs_rep, theta);

  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  const int p = std::min(cfg.p_proposals, m);
  const Rotation ray = cfg.ray_correction ? ray_rotation(crop.t_init) : Rotation();
  for (int j = 0; j < p; ++j) {
    const int i = order[static_cast<std::size_t>(j)];
    const int rank = live[static_cast<std::size_t>(i)];
    PoseHypothesis h;
    h.source_rank = rank;
    h.record = hits[static_cast<std::size_t>(rank)].index;
    h.verify_score = scores[static_cast<std::size_t>(i)];
    const Vec2 u = theta[static_cast<std::size_t>(i)];
    h.inplane_deg = rad2deg(std::atan2(u.y(), u.x()));
    h.rotation = Rotation::project((ray * inplane_matrix(u) * cb.rotations[static_cast<std::size_t>(h.record)]).matrix());
    h.translation = crop.t_init;
    res.hypotheses.push_back(h);
  }
  res.timings.candidates_ms = ms_since(t0);

  t0 = Clock::now();
  parallel_for(res.hypotheses.size(), [&](std::size_t i) {
    auto& h = res.hypotheses[i];
    try {
      h.translation = refine_location(object.mesh, h.rotation, crop.t_init, depth.intrinsics);
    } catch (const DataError&) {
      h.translation = crop.t_init;
    }
  });
  res.timings.refine_ms = ms_since(t0);

  std::vector<Vec3> scene_pts;
  std::unique_ptr<KdTree> model_tree;
  auto run_icp = [&](PoseHypothesis& h) {
    if (!model_tree) {
      scene_pts = subsample_points(mask_to_points(depth, mask), cfg.icp_max_points);
      model_tree = std::make_unique<KdTree>(subsample_points(object.mesh.vertices, cfg.icp_max_points));
    }
    const IcpResult r = icp_refine(*model_tree, scene_pts, h.pose(), cfg.icp_max_iters, cfg.icp_tol_mm);
    if (r.skipped) return;
    h.rotation = r.pose.rotation;
    h.translation = r.pose.translation;
    h.icp_applied = true;
    h.icp_rms = r.rms;
  };
  auto score = [&](PoseHypothesis& h) {
    const QualityResult q = hypothesis_quality(object.mesh, h.pose(), observed, cb.diameter, cfg.unobserved_as_outlier);
    h.quality_q = q.q;
    h.degenerate = q.degenerate;
  };

  if (cfg.icp == IcpMode::BeforeSelection) {
    t0 = Clock::now();
    for (auto& h : res.hypotheses) run_icp(h);
    res.timings.icp_ms = ms_since(t0);
  }
  t0 = Clock::now();
  parallel_for(res.hypotheses.size(), [&](std::size_t i) { score(res.hypotheses[i]); });
  res.timings.quality_ms = ms_since(t0);
  res.best = res.hypotheses[static_cast<std::size_t>(select_hypothesis(res.hypotheses))];
  if (cfg.icp == IcpMode::AfterSelection) {
    t0 = Clock::now();
    run_icp(res.best);
    if (res.best.icp_applied) score(res.best);
    res.timings.icp_ms = ms_since(t0);
  }
  res.timings.total_ms = ms_since(t_start);
  return res;
}

EstimateResult estimate_pose(const Network<float>& net, const CodebookRegistry& registry, const std::string& object_id,
                             const DepthFrame& depth, const MaskFrame& mask, const EstimateConfig& cfg) {
  return estimate_pose(net, *registry.find(object_id), depth, mask, cfg);
}

}  // namespace ove6d
