#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>

#include "ove6d/metrics.hpp"
#include "ove6d/pipeline.hpp"
#include "ove6d/train.hpp"

namespace ove6d {

struct DataConfig {
  int shapes = 20;
  /// Extra shapes generated for the held-out split.
  int held_out = 0;
  int scenes = 100;
  int grid_cells = kShapeGridCells;
  std::optional<std::uint64_t> seed;
};

struct CodebookConfig {
  int n = 4000;
  double f_base = 5.0;
};

struct EvalConfig {
  double add_threshold = 0.1;
  bool vsd = true;
  double vsd_tau = kVsdTau;
  double vsd_delta = kVsdDelta;
  double vsd_threshold = kVsdThreshold;
  bool ablation = true;
  AblationSweep sweep;
};

/// The document behind --config. Section seeds that are not given derive from the top-level seed.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig train;
  CodebookConfig codebook;
  EstimateConfig estimate;
  EvalConfig eval;

  std::uint64_t data_seed() const;
  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static RunConfig from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt);
  /// Fully resolved: every default and derived seed written out.
  nlohmann::json to_json() const;
};

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          std::optional<std::uint64_t> seed_override = std::nullopt);
/// Writes the resolved config as config.json into dir.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Maps the error hierarchy onto exit codes.
int exit_code_for(const std::exception& e);

/// Shapes, manifest.json and rendered test scenes under out.
void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
/// Trains on the manifest's train split; writes network.ovck and loss.csv. With reuse, an
/// existing checkpoint whose echoed config matches is kept.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out,
               bool reuse, std::ostream& log);
/// One codebook per mesh: <out>/<object_id>.ovcb with the mesh copied next to it.
/// With `reuse`, objects whose codebook is newer than the checkpoint and matches codebook.n are kept.
void cmd_build_codebook(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::vector<std::filesystem::path>& meshes, const std::filesystem::path& out,
                        std::ostream& log, bool reuse = false);
/// Single-frame cascade; the pose record goes to out_pose.
void cmd_estimate(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& codebook,
                  const std::filesystem::path& depth, const std::filesystem::path& mask,
                  const std::optional<std::filesystem::path>& intrinsics,
                  const std::optional<std::filesystem::path>& mesh, const std::filesystem::path& out_pose,
                  std::ostream& log);
/// Metrics over a scene directory plus the ablation sweeps; writes report.json and CSVs.
void cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& codebook_dir, const std::filesystem::path& scene_dir,
                  const std::filesystem::path& out, std::ostream& log);
/// Returns true when every check passes.
bool cmd_selftest(std::uint64_t seed, std::ostream& log);

/// Mesh files listed in a gen-data manifest (train split).
std::vector<std::filesystem::path> manifest_meshes(const std::filesystem::path& data_dir);

/// Scene files written by gen-data.
struct SceneFile {
  std::filesystem::path depth, mask;
  EvalScene scene;
  bool symmetric = false;
  double diameter = 0;
};
void save_scene(const EvalScene& s, bool symmetric, double diameter, const std::filesystem::path& dir,
                const std::string& stem);
std::vector<SceneFile> load_scenes(const std::filesystem::path& dir);

}  // namespace ove6d
