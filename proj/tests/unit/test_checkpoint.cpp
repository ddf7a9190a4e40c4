#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "instances.hpp"
#include "melu/checkpoint.hpp"
#include "melu/config.hpp"
#include "melu/errors.hpp"
#include "melu/json_io.hpp"

using namespace melu;
using namespace melu::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Checkpoint sample(std::uint64_t seed) {
  const auto inst = random_instance(seed);
  Checkpoint c;
  c.model = inst.config;
  c.schema = inst.schema;
  c.state.params = inst.params;
  c.state.epoch = 7;
  c.state.rng_state = "1 2 3";
  c.state.loss_history = {{1, 2.5, 1.25, 0.5}, {2, 1.0 / 3.0, 0.1, 0.25}};
  c.state.warnings = {"user 4: empty query set, episode skipped"};
  c.state.skipped_episodes = 1;
  c.provenance = {{"seed", seed}};
  return c;
}

}  // namespace

TEST_CASE("checkpoints round trip bit-exactly") {
  const auto dir = fs::temp_directory_path() / "melu_test_checkpoint";
  fs::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto c = sample(seed);
    const auto path = dir / "ckpt.json";
    save_checkpoint(path, c);
    const auto back = load_checkpoint(path);
    CHECK(back.state.params == c.state.params);
    CHECK(back.schema == c.schema);
    CHECK(back.model == c.model);
    CHECK(back.state.epoch == 7);
    CHECK(back.state.rng_state == c.state.rng_state);
    REQUIRE(back.state.loss_history.size() == 2);
    CHECK(back.state.loss_history[1].support_loss == 1.0 / 3.0);
    CHECK(back.state.warnings == c.state.warnings);
    CHECK(back.provenance == c.provenance);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto c = sample(3);
  auto j = checkpoint_to_json(c);

  auto tampered = j;
  tampered["schema_digest"] = "0000000000000000";
  CHECK_THROWS_AS(checkpoint_from_json(tampered), SchemaError);

  auto missing = j;
  missing["parameters"].erase("theta2/bo");
  CHECK_THROWS_AS(checkpoint_from_json(missing), SchemaError);

  auto misshapen = j;
  misshapen["parameters"]["theta2/bo"] = Matrix(1, 2);
  CHECK_THROWS_AS(checkpoint_from_json(misshapen), SchemaError);

  auto extra = j;
  extra["parameters"]["theta2/extra"] = Matrix(1, 1);
  CHECK_THROWS_AS(checkpoint_from_json(extra), SchemaError);

  auto broken = j;
  broken.erase("model");
  CHECK_THROWS_AS(checkpoint_from_json(broken), SchemaError);

  CHECK(checkpoint_from_json(j).state.params == c.state.params);
}

TEST_CASE("parameter names are canonical") {
  const auto c = sample(1);
  const auto j = parameters_to_json(c.state.params, c.schema);
  CHECK(j.contains("theta2/Wo"));
  CHECK(j.contains("theta2/bo"));
  CHECK(j.contains("theta2/W1"));
  CHECK(j.contains("theta1/user/" + c.schema.user_fields[0].name));
}

TEST_CASE("config parsing") {
  const json j = {
      {"seed", 17},
      {"model", {{"embedding_dim", 8}, {"layer_widths", {16, 16}}}},
      {"training", {{"alpha", 0.01}, {"batch_size", 4}}},
      {"pipeline", {{"seed", 99}}},
      {"service", {{"port", 0}, {"session_log", "logs/s.jsonl"}}},
      {"data", {{"preset", "movielens-1m"}, {"data_dir", "ml"}}}};
  const auto c = config_from_json(j, "/cfg");
  CHECK(c.seed == 17);
  CHECK(c.training.seed == 17);
  CHECK(c.service.ab_seed == 17);
  CHECK(c.pipeline.seed == 99);
  CHECK(c.model.embedding_dim == 8);
  CHECK(c.training.alpha == 0.01);
  CHECK(c.training.beta == TrainConfig{}.beta);
  CHECK(c.service.session_log == fs::path("/cfg/logs/s.jsonl"));
  REQUIRE(c.format().has_value());
  CHECK(c.format()->ratings.path == fs::path("/cfg/ml/ratings.dat"));

  CHECK(config_from_json(j, "/cfg").digest() == c.digest());
  auto other = c;
  other.apply_seed(18);
  CHECK(other.digest() != c.digest());

  CHECK_THROWS_AS(config_from_json({{"training", {{"batch_size", 0}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"model", {{"embedding_dim", "x"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"service", {{"port", 70000}}}}), ConfigError);
  CHECK_FALSE(config_from_json(json::object()).format().has_value());
}

TEST_CASE("config files load relative to their directory") {
  const auto dir = fs::temp_directory_path() / "melu_test_config";
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"seed": 3, "service": {"static_dir": "ui"}})";
  const auto c = load_config(dir / "c.json");
  CHECK(c.service.static_dir == dir / "ui");
  CHECK(c.pipeline.seed == 3);
}
