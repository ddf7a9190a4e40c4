#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "instances.hpp"
#include "melu/evaluation.hpp"
#include "melu/json_io.hpp"
#include "melu/synthetic.hpp"
#include "oracles.hpp"

using namespace melu;
using namespace melu::testing;
namespace fs = std::filesystem;

namespace {

PartitionedDataset dataset_from(const SyntheticFamily& fam) {
  PartitionedDataset ds;
  ds.schema = fam.schema;
  for (std::size_t i = 0; i < fam.episodes.size(); ++i) {
    ds.cells[i % 3 == 0 ? 0 : 3].push_back(fam.episodes[i]);
  }
  return ds;
}

SyntheticFamily small_family() {
  SyntheticSpec spec;
  spec.users = 30;
  spec.seed = 2;
  return make_synthetic_family(spec);
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.embedding_dim = 4;
  mc.layer_widths = {8, 8};
  return mc;
}

}  // namespace

TEST_CASE("evaluation headline, sweep and breakdown agree") {
  const auto fam = small_family();
  const auto ds = dataset_from(fam);
  std::mt19937_64 rng(1);
  auto params = init_parameters(fam.schema, small_model(), rng);
  params.biases.back().data[0] = 3.0;
  const auto before = params;

  EvalOptions opt;
  opt.alpha = 0.05;
  opt.local_steps = 2;
  opt.threads = 3;
  const auto report = evaluate(params, ds, opt);
  CHECK(params == before);

  CHECK(report.cells[0].has_value());
  CHECK_FALSE(report.cells[1].has_value());
  CHECK_FALSE(report.cells[2].has_value());
  REQUIRE(report.cells[3].has_value());
  REQUIRE(report.sweep.size() == 6);
  for (std::size_t c : {0u, 3u}) {
    CHECK(*report.sweep[2].mae[c] == report.cells[c]->mae);
    for (std::size_t s = 0; s <= 5; ++s) {
      const auto preds = predict_queries(ds.cells[c], params, opt.alpha, s);
      CHECK(*report.sweep[s].mae[c] == doctest::Approx(cell_metrics(preds, opt).mae).epsilon(1e-12));
    }
    const auto preds = predict_queries(ds.cells[c], params, opt.alpha, 2);
    CHECK(report.cells[c]->ndcg1 == brute_ndcg(preds, 1));
    CHECK(report.cells[c]->ndcg3 == doctest::Approx(brute_ndcg(preds, 3)).epsilon(1e-12));
    CHECK(report.cells[c]->users == ds.cells[c].size());

    std::size_t users = 0;
    double weighted = 0.0;
    for (const auto& b : report.by_support_length) {
      if (b.cell != c) continue;
      users += b.users;
      weighted += b.mae * static_cast<double>(b.users);
      CHECK(b.unstable == (b.users < opt.min_stable_users));
    }
    CHECK(users == ds.cells[c].size());
    CHECK(weighted / static_cast<double>(users) ==
          doctest::Approx(report.cells[c]->mae).epsilon(1e-12));
  }
  CHECK(report.sweep[0].mae[0] != report.sweep[1].mae[0]);
  CHECK(evaluate(params, ds, opt).cells[3]->mae == report.cells[3]->mae);
}

TEST_CASE("clamping only affects MAE") {
  UserPredictions u{{1, 5.0, 7.0}, {2, 1.0, -1.0}};
  const std::vector<UserPredictions> users{u};
  EvalOptions opt;
  const auto clamped = cell_metrics(users, opt);
  CHECK(clamped.mae == 0.0);
  opt.clamp = false;
  CHECK(cell_metrics(users, opt).mae == 2.0);
  CHECK(clamped.ndcg1 == 1.0);
}

TEST_CASE("cell labels and report layout") {
  CHECK(cell_label(0) == "existing_users__existing_items");
  CHECK(cell_label(1) == "existing_users__new_items");
  CHECK(cell_label(2) == "new_users__existing_items");
  CHECK(cell_label(3) == "new_users__new_items");

  const auto fam = small_family();
  const auto ds = dataset_from(fam);
  std::mt19937_64 rng(1);
  const auto params = init_parameters(fam.schema, small_model(), rng);
  EvalOptions opt;
  const auto meta = evaluate(params, ds, opt);
  opt.method = "joint";
  opt.local_steps = 0;
  const auto joint = evaluate(params, ds, opt);

  const auto j = report_to_json(meta, &joint);
  REQUIRE(j["rows"].size() == 4);
  CHECK(j["rows"][0]["label"] == "train-cell");
  CHECK(j["rows"][0]["method"] == "MeLU");
  CHECK_FALSE(j["rows"][1].contains("label"));
  CHECK(j["rows"][2]["method"] == "joint");
  CHECK(j["baseline_method"] == "joint");
  REQUIRE(j["baseline_deltas"].size() == 2);
  CHECK(j["baseline_deltas"][1]["mae"].get<double>() ==
        meta.cells[3]->mae - joint.cells[3]->mae);
  CHECK(j["sweep"].size() == 6);

  const auto dir = fs::temp_directory_path() / "melu_test_report";
  fs::remove_all(dir);
  write_report(dir, meta, &joint, {{"seed", 1}});
  const auto doc = read_json_file(dir / "report.json");
  CHECK(doc["provenance"]["seed"] == 1);
  std::ifstream sweep(dir / "sweep.tsv");
  std::string header;
  std::getline(sweep, header);
  CHECK(header.rfind("local_steps\texisting_users__existing_items", 0) == 0);
  CHECK(fs::exists(dir / "support_length.tsv"));
}

TEST_CASE("joint baseline is deterministic") {
  const auto fam = small_family();
  TrainConfig cfg;
  cfg.beta = 1e-3;
  cfg.max_epochs = 3;
  cfg.seed = 4;
  const auto a = train_joint_baseline(fam.episodes, cfg, small_model(), fam.schema);
  const auto b = train_joint_baseline(fam.episodes, cfg, small_model(), fam.schema);
  CHECK(a.params == b.params);
  CHECK(a.loss_history.size() == 3);
  cfg.seed = 5;
  CHECK_FALSE(train_joint_baseline(fam.episodes, cfg, small_model(), fam.schema).params ==
              a.params);
}

TEST_CASE("with one user, joint training matches a meta step with alpha 0") {
  auto inst = random_instance(21);
  auto e = inst.episodes[0];
  e.query = e.support;
  const std::vector<UserEpisode> one{e};
  TrainConfig cfg;
  cfg.alpha = 0.0;
  cfg.beta = 0.05;
  cfg.batch_size = 1000;
  cfg.max_epochs = 1;
  cfg.seed = 8;
  const auto joint = train_joint_baseline(one, cfg, inst.config, inst.schema);
  const auto meta = train(one, cfg, inst.config, inst.schema);
  const auto mismatch = first_mismatch(joint.params, meta.params, 1e-12, 1e-14);
  INFO(mismatch.value_or(""));
  CHECK_FALSE(mismatch.has_value());
}
