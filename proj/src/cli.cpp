#include "ove6d/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>

#include "ove6d/codebook.hpp"
#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"
#include "ove6d/frame_io.hpp"
#include "ove6d/mesh_io.hpp"
#include "ove6d/rng.hpp"
#include "ove6d/selftest.hpp"

namespace ove6d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t derived_seed(std::uint64_t seed, const char* name) {
  return CounterRng(seed, CounterRng::hash(name)).next_u64();
}

template <typename F>
void each_key(const json& j, const std::string& section, F&& f) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!f(it.key(), *it)) throw ConfigError("unknown key '" + section + "." + it.key() + "'");
    } catch (const json::exception& e) {
      throw ConfigError(section + "." + it.key() + ": " + e.what());
    }
  }
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const json& j, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + p.string());
}

json mat_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

Mat3 mat_from(const json& a) {
  if (!a.is_array() || a.size() != 9) throw FormatError("rotation must be 9 numbers");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(3 * r + c)].get<double>();
  return m;
}

Network<float> load_checkpoint(const fs::path& p) { return load_network(p); }

TriangleMesh load_named_mesh(const fs::path& p) {
  TriangleMesh m = load_mesh(p);
  if (m.object_id.empty()) m.object_id = p.stem().string();
  return m;
}

}  // namespace

std::uint64_t RunConfig::data_seed() const { return data.seed ? *data.seed : derived_seed(seed, "data"); }

RunConfig RunConfig::from_json(const json& j, std::optional<std::uint64_t> seed_override) {
  RunConfig c;
  bool train_seed = false;
  std::optional<int> estimate_n;
  each_key(j, "config", [&](const std::string& k, const json& v) {
    if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "data") {
      each_key(v, "data", [&](const std::string& dk, const json& dv) {
        if (dk == "shapes") c.data.shapes = dv.get<int>();
        else if (dk == "held_out") c.data.held_out = dv.get<int>();
        else if (dk == "scenes") c.data.scenes = dv.get<int>();
        else if (dk == "grid_cells") c.data.grid_cells = dv.get<int>();
        else if (dk == "seed") c.data.seed = dv.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (k == "train") {
      c.train = TrainConfig::from_json(v);
      train_seed = v.contains("seed");
    } else if (k == "codebook") {
      each_key(v, "codebook", [&](const std::string& ck, const json& cv) {
        if (ck == "n") c.codebook.n = cv.get<int>();
        else if (ck == "f_base") c.codebook.f_base = cv.get<double>();
        else return false;
        return true;
      });
    } else if (k == "estimate") {
      c.estimate = EstimateConfig::from_json(v);
      if (v.contains("n_views")) estimate_n = c.estimate.n_views;
    } else if (k == "eval") {
      each_key(v, "eval", [&](const std::string& ek, const json& ev) {
        if (ek == "add_threshold") c.eval.add_threshold = ev.get<double>();
        else if (ek == "vsd") c.eval.vsd = ev.get<bool>();
        else if (ek == "vsd_tau") c.eval.vsd_tau = ev.get<double>();
        else if (ek == "vsd_delta") c.eval.vsd_delta = ev.get<double>();
        else if (ek == "vsd_threshold") c.eval.vsd_threshold = ev.get<double>();
        else if (ek == "ablation") c.eval.ablation = ev.get<bool>();
        else if (ek == "sweep") {
          each_key(ev, "eval.sweep", [&](const std::string& sk, const json& sv) {
            if (sk == "n") c.eval.sweep.n = sv.get<std::vector<int>>();
            else if (sk == "k") c.eval.sweep.k = sv.get<std::vector<int>>();
            else if (sk == "p") c.eval.sweep.p = sv.get<std::vector<int>>();
            else return false;
            return true;
          });
        } else return false;
        return true;
      });
    } else return false;
    return true;
  });
  if (seed_override) c.seed = *seed_override;
  if (!train_seed || seed_override) c.train.seed = derived_seed(c.seed, "train");
  if (seed_override) c.data.seed.reset();
  c.data.seed = c.data_seed();

  if (c.data.shapes < 2 || c.data.held_out < 0 || c.data.scenes < 0 || c.data.grid_cells < 2)
    throw ConfigError("data needs shapes >= 2, held_out >= 0, scenes >= 0, grid_cells >= 2");
  if (c.codebook.n < 2 || !(c.codebook.f_base > 0)) throw ConfigError("codebook needs n >= 2 and f_base > 0");
  if (estimate_n && *estimate_n != c.codebook.n)
    throw ConfigError("estimate.n_views must equal codebook.n (or be omitted)");
  c.estimate.n_views = c.codebook.n;
  c.estimate.f_base = c.codebook.f_base;
  c.estimate.validate();
  if (!(c.eval.add_threshold > 0) || !(c.eval.vsd_tau > 0) || !(c.eval.vsd_delta >= 0) || !(c.eval.vsd_threshold > 0))
    throw ConfigError("eval thresholds must be positive");
  for (int n : c.eval.sweep.n)
    if (n < 2) throw ConfigError("eval.sweep.n values must be >= 2");
  for (int k : c.eval.sweep.k)
    if (k < 1) throw ConfigError("eval.sweep.k values must be >= 1");
  for (int p : c.eval.sweep.p)
    if (p < 1) throw ConfigError("eval.sweep.p values must be >= 1");
  return c;
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"data",
           {{"shapes", data.shapes},
            {"held_out", data.held_out},
            {"scenes", data.scenes},
            {"grid_cells", data.grid_cells},
            {"seed", data_seed()}}},
          {"train", train.to_json()},
          {"codebook", {{"n", codebook.n}, {"f_base", codebook.f_base}}},
          {"estimate", estimate.to_json()},
          {"eval",
           {{"add_threshold", eval.add_threshold},
            {"vsd", eval.vsd},
            {"vsd_tau", eval.vsd_tau},
            {"vsd_delta", eval.vsd_delta},
            {"vsd_threshold", eval.vsd_threshold},
            {"ablation", eval.ablation},
            {"sweep", {{"n", eval.sweep.n}, {"k", eval.sweep.k}, {"p", eval.sweep.p}}}}}};
}

RunConfig load_run_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed_override) {
  if (!path) return RunConfig::from_json(json::object(), seed_override);
  json j;
  try {
    j = read_json(*path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return RunConfig::from_json(j, seed_override);
}

void echo_config(const RunConfig& cfg, const fs::path& dir) { write_json(cfg.to_json(), dir / "config.json"); }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const EstimationFailure*>(&e)) return kExitNumerical;
  return kExitFailure;
}

void save_scene(const EvalScene& s, bool symmetric, double diameter, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  const std::string depth = stem + "_depth.png", mask = stem + "_mask.png";
  save_depth_png(s.depth, dir / depth, 0.1);
  save_mask_png(s.mask, dir / mask);
  const Vec3& t = s.pose_gt.translation;
  write_json({{"object_id", s.object_id},
              {"symmetric", symmetric},
              {"diameter_mm", diameter},
              {"rotation", mat_json(s.pose_gt.rotation.matrix())},
              {"translation_mm", {t.x(), t.y(), t.z()}},
              {"depth", depth},
              {"mask", mask}},
             dir / (stem + ".json"));
}

std::vector<SceneFile> load_scenes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("scene directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".json" && name.find(".png") == std::string::npos) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SceneFile> out;
  for (const auto& f : files) {
    const json j = read_json(f);
    SceneFile s;
    try {
      s.depth = dir / j.at("depth").get<std::string>();
      s.mask = dir / j.at("mask").get<std::string>();
      s.symmetric = j.at("symmetric").get<bool>();
      s.diameter = j.at("diameter_mm").get<double>();
      s.scene.object_id = j.at("object_id").get<std::string>();
      s.scene.pose_gt.rotation = Rotation::project(mat_from(j.at("rotation")));
      const auto t = j.at("translation_mm").get<std::vector<double>>();
      if (t.size() != 3) throw FormatError("translation_mm must have 3 entries");
      s.scene.pose_gt.translation = Vec3(t[0], t[1], t[2]);
    } catch (const json::exception& e) {
      throw FormatError(f.string() + ": " + e.what());
    }
    s.scene.depth = load_depth_png(s.depth);
    s.scene.mask = load_mask_png(s.mask);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<fs::path> manifest_meshes(const fs::path& data_dir) {
  const Manifest m = load_manifest(data_dir / "manifest.json");
  std::vector<fs::path> out;
  for (const auto& e : m.objects)
    if (e.split == "train") out.push_back(data_dir / e.mesh_path);
  return out;
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  fs::create_directories(out / "meshes");
  const int total = cfg.data.shapes + cfg.data.held_out;
  const auto specs = generate_shape_specs(total, cfg.data_seed());
  Manifest man;
  man.seed = cfg.data_seed();
  std::vector<TriangleMesh> meshes;
  for (int i = 0; i < total; ++i) {
    const ShapeSpec& s = specs[static_cast<std::size_t>(i)];
    TriangleMesh mesh = generate_shape(s, cfg.data.grid_cells);
    const std::string rel = "meshes/" + s.object_id + ".ply";
    save_mesh(mesh, out / rel);
    man.objects.push_back({s.object_id, rel, s.family, mesh_diameter(mesh), s.seed, i < cfg.data.shapes ? "train" : "held_out"});
    meshes.push_back(std::move(mesh));
    log << "shape " << s.object_id << " " << family_name(s.family) << " diameter " << man.objects.back().diameter << "\n";
  }
  man.notes = {{"grid_cells", cfg.data.grid_cells}};
  save_manifest(man, out / "manifest.json");

  const CounterRng rng(cfg.data_seed(), CounterRng::hash("scenes"));
  for (int i = 0; i < cfg.data.scenes; ++i) {
    const int o = i % cfg.data.shapes;
    const auto& e = man.objects[static_cast<std::size_t>(o)];
    const EvalScene sc = make_eval_scene(meshes[static_cast<std::size_t>(o)], e.diameter, rng.derive(static_cast<std::uint64_t>(i)).next_u64());
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%04d", i);
    save_scene(sc, family_is_symmetric(e.family), e.diameter, out / "scenes", stem);
  }
  log << "wrote " << total << " shapes and " << cfg.data.scenes << " scenes to " << out.string() << "\n";
  echo_config(cfg, out);
}

void cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out, bool reuse, std::ostream& log) {
  const fs::path ckpt = out / "network.ovck";
  if (reuse && fs::exists(ckpt) && fs::exists(out / "config.json")) {
    const json old = read_json(out / "config.json");
    const json now = cfg.to_json();
    if (old.value("train", json()) == now["train"] && old.value("data", json()) == now["data"]) {
      log << "reusing " << ckpt.string() << "\n";
      return;
    }
  }
  std::vector<TrainObject> objects;
  for (const auto& p : manifest_meshes(data_dir)) {
    TrainObject o;
    o.mesh = load_named_mesh(p);
    o.diameter = mesh_diameter(o.mesh);
    objects.push_back(std::move(o));
  }
  fs::create_directories(out);
  std::ofstream csv(out / "loss.csv");
  csv << "step,epoch,lr,loss,viewpoint,verification,inplane,ranking_accuracy,seconds\n";
  const TrainResult r = train(objects, cfg.train, [&](const StepLog& s) {
    csv << s.step << ',' << s.epoch << ',' << s.lr << ',' << s.loss << ',' << s.viewpoint << ',' << s.verification << ','
        << s.inplane << ',' << s.ranking_accuracy << ',' << s.seconds << '\n';
    csv.flush();
    log << "step " << s.step << " epoch " << std::fixed << std::setprecision(2) << s.epoch << " loss "
        << std::setprecision(4) << s.loss << " vp " << s.viewpoint << " css " << s.verification << " theta "
        << s.inplane << " rank " << std::setprecision(2) << s.ranking_accuracy << " " << std::setprecision(1)
        << s.seconds << "s\n"
        << std::defaultfloat << std::flush;
  });
  save_network(r.net, ckpt);
  echo_config(cfg, out);
  log << "wrote " << ckpt.string() << "\n";
}

void cmd_build_codebook(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<fs::path>& meshes,
                        const fs::path& out, std::ostream& log, bool reuse) {
  if (meshes.empty()) throw InvalidArgument("no meshes given");
  const Network<float> net = load_checkpoint(checkpoint);
  fs::create_directories(out);
  for (const auto& p : meshes) {
    const TriangleMesh mesh = load_named_mesh(p);
    const fs::path target = out / (mesh.object_id + ".ovcb");
    if (reuse && fs::exists(target) && fs::last_write_time(target) > fs::last_write_time(checkpoint) &&
        load_codebook(target).size() == cfg.codebook.n) {
      log << "reusing " << target.string() << "\n";
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const ViewpointCodebook cb = build_codebook(net, mesh, cfg.codebook.n, cfg.codebook.f_base);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_codebook(cb, out / (cb.object_id + ".ovcb"));
    save_mesh(mesh, out / (cb.object_id + ".ply"));
    log << "codebook " << cb.object_id << " N=" << cb.size() << " in " << std::fixed << std::setprecision(1) << secs
        << " s\n"
        << std::defaultfloat;
  }
  echo_config(cfg, out);
}

void cmd_estimate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& codebook, const fs::path& depth,
                  const fs::path& mask, const std::optional<fs::path>& intrinsics, const std::optional<fs::path>& mesh,
                  const fs::path& out_pose, std::ostream& log) {
  const Network<float> net = load_checkpoint(checkpoint);
  ViewpointCodebook cb = load_codebook(codebook);
  fs::path mesh_path;
  if (mesh) mesh_path = *mesh;
  else if (!cb.mesh_ref.empty()) mesh_path = cb.mesh_ref;
  else throw DataError("no mesh next to " + codebook.string() + "; pass --mesh");
  TriangleMesh m = load_named_mesh(mesh_path);
  m.object_id = cb.object_id;
  DepthFrame d = load_depth_png(depth);
  if (intrinsics) {
    d.intrinsics = load_intrinsics(*intrinsics);
    if (d.intrinsics.width != d.width || d.intrinsics.height != d.height)
      throw DataError("intrinsics size does not match the depth image");
  }
  const MaskFrame k = load_mask_png(mask);
  CodebookRegistry reg;
  const std::string id = cb.object_id;
  reg.add(std::move(cb), std::move(m));
  const EstimateResult r = estimate_pose(net, reg, id, d, k, cfg.estimate);
  write_json(r.to_json(id), out_pose);
  const fs::path dir = out_pose.has_parent_path() ? out_pose.parent_path() : fs::path(".");
  echo_config(cfg, dir);
  log << "pose of " << id << ": q " << r.best.quality_q << ", verify " << r.best.verify_score << ", "
      << r.timings.total_ms << " ms\n";
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& codebook_dir,
                  const fs::path& scene_dir, const fs::path& out, std::ostream& log) {
  const Network<float> net = load_checkpoint(checkpoint);
  const auto scene_files = load_scenes(scene_dir);
  if (scene_files.empty()) throw DataError("no scenes in " + scene_dir.string());
  std::map<std::string, bool> symmetric;
  std::vector<EvalScene> scenes;
  for (const auto& s : scene_files) {
    symmetric[s.scene.object_id] = s.symmetric;
    scenes.push_back(s.scene);
  }

  CodebookRegistry base;
  std::map<std::string, TriangleMesh> meshes;
  for (const auto& [id, sym] : symmetric) {
    const fs::path cbp = codebook_dir / (id + ".ovcb");
    ViewpointCodebook cb = load_codebook(cbp);
    if (cb.mesh_ref.empty()) throw DataError("no mesh next to " + cbp.string());
    TriangleMesh m = load_named_mesh(cb.mesh_ref);
    m.object_id = id;
    meshes[id] = m;
    base.add(std::move(cb), std::move(m), sym);
  }
  const int base_n = base.find(symmetric.begin()->first)->codebook.size();
  EstimateConfig ecfg = cfg.estimate;
  ecfg.n_views = base_n;

  fs::create_directories(out);
  const auto results = evaluate_scenes(net, base, scenes, ecfg);
  json report = {{"scenes", results.size()}, {"estimate", ecfg.to_json()}};
  report["add_s_recall"] = recall_of(results, cfg.eval.add_threshold);
  if (cfg.eval.vsd) {
    std::vector<double> errs;
    std::ofstream vcsv(out / "vsd.csv");
    vcsv << "scene,object_id,vsd\n";
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      double e = 1.0;
      if (!results[i].failed) {
        const auto entry = base.find(scenes[i].object_id);
        e = vsd_error(scenes[i].depth, entry->mesh, scenes[i].pose_gt, results[i].pose_est, cfg.eval.vsd_tau,
                      cfg.eval.vsd_delta);
      }
      errs.push_back(e);
      vcsv << i << ',' << scenes[i].object_id << ',' << e << '\n';
    }
    report["vsd_recall"] = vsd_recall(errs, cfg.eval.vsd_threshold);
  }
  AblationReport ab;
  ab.base = results;
  ab.curves = precision_curves(results);
  if (cfg.eval.ablation) {
    std::map<int, CodebookRegistry> extra;
    std::map<int, const CodebookRegistry*> by_n{{base_n, &base}};
    for (int n : cfg.eval.sweep.n) {
      if (by_n.count(n)) continue;
      for (const auto& [id, m] : meshes) extra[n].add(build_codebook(net, m, n, cfg.codebook.f_base), m, symmetric[id]);
      by_n[n] = &extra[n];
    }
    AblationSweep sweep = cfg.eval.sweep;
    ab = ablation_harness(net, by_n, scenes, sweep, ecfg);
    log << ab.table();
    json rows = json::array();
    for (const auto& r : ab.rows)
      rows.push_back({{"parameter", r.parameter}, {"n", r.n}, {"k", r.k}, {"p", r.p}, {"recall", r.recall}, {"mean_ms", r.mean_ms}});
    report["ablation"] = rows;
  }
  ab.write_csv(out);
  write_json(report, out / "report.json");
  echo_config(cfg, out);
  log << "ADD(-S) recall @" << cfg.eval.add_threshold << "d: " << report["add_s_recall"].get<double>() << "\n";
  if (report.contains("vsd_recall")) log << "VSD recall: " << report["vsd_recall"].get<double>() << "\n";
}

bool cmd_selftest(std::uint64_t seed, std::ostream& log) {
  bool ok = true;
  for (const auto& c : run_selftest(seed)) {
    log << (c.pass ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) log << " (" << c.detail << ")";
    log << "\n";
    ok = ok && c.pass;
  }
  return ok;
}

}  // namespace ove6d
