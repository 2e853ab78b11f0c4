#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "ove6d/cli.hpp"
#include "ove6d/datagen.hpp"
#include "ove6d/error.hpp"

using namespace ove6d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every key path of an instance must be declared in the schema, and vice versa.
void same_keys(const json& schema, const json& inst, const std::string& at) {
  REQUIRE(schema.contains("properties"));
  CHECK_MESSAGE(schema["additionalProperties"] == false, at);
  for (auto it = inst.begin(); it != inst.end(); ++it) {
    CHECK_MESSAGE(schema["properties"].contains(it.key()), (at + "." + it.key()));
    if (it->is_object() && schema["properties"].contains(it.key())) same_keys(schema["properties"][it.key()], *it, (at + "." + it.key()));
  }
  for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
    CHECK_MESSAGE(inst.contains(it.key()), (at + "." + it.key()));
}

}  // namespace

TEST_CASE("run config") {
  const RunConfig def = RunConfig::from_json(json::object());
  CHECK(def.estimate.n_views == def.codebook.n);
  CHECK(def.data.seed.has_value());

  // The echo reproduces itself.
  const json echo = def.to_json();
  CHECK(RunConfig::from_json(echo).to_json() == echo);

  CHECK_THROWS_AS(RunConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"shapez", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"train", {{"epochs", "five"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"codebook", {{"n", 1000}}}, {"estimate", {{"n_views", 4000}}}}), ConfigError);

  const RunConfig a = RunConfig::from_json({{"seed", 1}}), b = RunConfig::from_json({{"seed", 2}});
  CHECK(a.train.seed != b.train.seed);
  CHECK(a.data_seed() != b.data_seed());
  CHECK(RunConfig::from_json({{"seed", 1}}, 2).to_json() == b.to_json());
}

TEST_CASE("published schema covers the config") {
  const fs::path schema_path = fs::path(OVE6D_SOURCE_DIR) / "configs" / "schema.json";
  std::ifstream f(schema_path);
  REQUIRE(f);
  const json schema = json::parse(f);
  same_keys(schema, RunConfig::from_json(json::object()).to_json(), "config");

  for (const char* name : {"toy.json"}) {
    std::ifstream c(fs::path(OVE6D_SOURCE_DIR) / "configs" / name);
    REQUIRE(c);
    CHECK_NOTHROW(RunConfig::from_json(json::parse(c)));
  }
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(TruncatedError("x")) == kExitData);
  CHECK(exit_code_for(NumericalError("x")) == kExitNumerical);
  CHECK(exit_code_for(EstimationFailure("x")) == kExitNumerical);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitFailure);
}

TEST_CASE("scene files round trip") {
  const fs::path dir = fs::temp_directory_path() / "ove6d_unit_scenes";
  fs::remove_all(dir);
  const TriangleMesh m = generate_shape(random_shape_spec(ShapeFamily::Union, 1, "u"), 10);
  const double d = mesh_diameter(m);
  EvalScene sc = make_eval_scene(m, d, 3);
  sc.object_id = "u";
  save_scene(sc, false, d, dir, "scene_0000");
  const auto back = load_scenes(dir);
  REQUIRE(back.size() == 1);
  CHECK(back[0].scene.object_id == "u");
  CHECK(back[0].diameter == d);
  CHECK(back[0].scene.mask.bits == sc.mask.bits);
  CHECK((back[0].scene.pose_gt.translation - sc.pose_gt.translation).norm() < 1e-9);
  CHECK(geodesic_angle(back[0].scene.pose_gt.rotation, sc.pose_gt.rotation) < 1e-6);
  for (std::size_t i = 0; i < sc.depth.depth.size(); ++i) CHECK(std::abs(back[0].scene.depth.depth[i] - sc.depth.depth[i]) <= 0.05f + 1e-3f);
  fs::remove_all(dir);
}

TEST_CASE("selftest command") {
  std::ostringstream log;
  CHECK(cmd_selftest(1, log));
  CHECK(log.str().find("FAIL") == std::string::npos);
}
