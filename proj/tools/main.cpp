#include <CLI11.hpp>
#include <iostream>

#include "ove6d/cli.hpp"
#include "ove6d/parallel.hpp"

namespace fs = std::filesystem;
using namespace ove6d;

int main(int argc, char** argv) {
  CLI::App app{"ove6d: cascaded 6D pose estimation from depth images"};
  app.require_subcommand(1);

  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  app.add_option("--config", config, "run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "top-level seed, overrides the config");
  app.add_option("--threads", threads, "worker threads, 0 = all cores");

  fs::path out;
  auto* gen = app.add_subcommand("gen-data", "generate procedural shapes, a manifest and eval scenes");
  gen->add_option("--out", out, "output directory")->required();

  fs::path data_dir;
  bool reuse = false;
  auto* train = app.add_subcommand("train", "train the network on generated shapes");
  train->add_option("--data", data_dir, "gen-data output directory")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--reuse", reuse, "keep an existing checkpoint trained with the same config");

  fs::path checkpoint;
  std::vector<fs::path> meshes;
  auto* build = app.add_subcommand("build-codebook", "render and encode viewpoint codebooks");
  build->add_option("--checkpoint", checkpoint, "network checkpoint")->required();
  auto* mesh_opt = build->add_option("--mesh", meshes, "object mesh (.ply/.obj), repeatable");
  auto* data_opt = build->add_option("--data", data_dir, "use every training mesh of a gen-data directory");
  build->add_option("--out", out, "output directory")->required();
  build->add_flag("--reuse", reuse, "keep codebooks newer than the checkpoint");
  mesh_opt->excludes(data_opt);

  fs::path codebook, depth, mask;
  std::optional<fs::path> intrinsics, est_mesh;
  auto* est = app.add_subcommand("estimate", "estimate the pose of one object in one depth frame");
  est->add_option("--checkpoint", checkpoint, "network checkpoint")->required();
  est->add_option("--codebook", codebook, "codebook (.ovcb)")->required();
  est->add_option("--depth", depth, "16-bit depth PNG")->required();
  est->add_option("--mask", mask, "object mask PNG")->required();
  est->add_option("--intrinsics", intrinsics, "intrinsics JSON, defaults to the depth sidecar");
  est->add_option("--mesh", est_mesh, "object mesh, defaults to the one next to the codebook");
  est->add_option("--out", out, "pose JSON to write")->required();

  fs::path scene_dir;
  auto* eval = app.add_subcommand("evaluate", "ADD(-S), VSD and ablation sweeps over a scene directory");
  eval->add_option("--checkpoint", checkpoint, "network checkpoint")->required();
  eval->add_option("--codebooks", codebook, "directory of codebooks")->required();
  eval->add_option("--scenes", scene_dir, "directory of scenes")->required();
  eval->add_option("--out", out, "report directory")->required();

  auto* self = app.add_subcommand("selftest", "gradient, renderer and round-trip checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    set_thread_count(threads);
    if (*self) {
      const RunConfig cfg = load_run_config(config, seed);
      return cmd_selftest(cfg.seed, std::cout) ? kExitOk : kExitFailure;
    }
    const RunConfig cfg = load_run_config(config, seed);
    if (*gen) cmd_gen_data(cfg, out, std::cout);
    else if (*train) cmd_train(cfg, data_dir, out, reuse, std::cout);
    else if (*build) {
      if (!data_dir.empty()) meshes = manifest_meshes(data_dir);
      cmd_build_codebook(cfg, checkpoint, meshes, out, std::cout, reuse);
    } else if (*est)
      cmd_estimate(cfg, checkpoint, codebook, depth, mask, intrinsics, est_mesh, out, std::cout);
    else if (*eval)
      cmd_evaluate(cfg, checkpoint, codebook, scene_dir, out, std::cout);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
