// melu: prepare, train, evaluate, select-evidence and serve from the command
// line. Every subcommand prints a provenance header (config digest, seed,
// version) and writes it next to its outputs.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "melu/checkpoint.hpp"
#include "melu/config.hpp"
#include "melu/data.hpp"
#include "melu/digest.hpp"
#include "melu/errors.hpp"
#include "melu/evaluation.hpp"
#include "melu/evidence.hpp"
#include "melu/http_frontend.hpp"
#include "melu/json_io.hpp"
#include "melu/service.hpp"
#include "melu/synthetic.hpp"

using namespace melu;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

AppConfig load_app_config(const Globals& g) {
  AppConfig c = g.config_path.empty() ? config_from_json(json::object())
                                      : load_config(g.config_path);
  if (g.seed) c.apply_seed(*g.seed);
  if (g.threads > 0) {
    c.training.threads = g.threads;
    c.evidence.threads = g.threads;
  }
  c.validate();
  return c;
}

json provenance(const AppConfig& c, const std::string& command) {
  return {{"command", command},
          {"version", MELU_VERSION},
          {"config_digest", to_hex(c.digest())},
          {"seed", c.seed}};
}

void print_header(const json& prov) {
  std::fprintf(stderr, "# melu %s %s config %s seed %llu\n",
               prov["version"].get<std::string>().c_str(),
               prov["command"].get<std::string>().c_str(),
               prov["config_digest"].get<std::string>().c_str(),
               static_cast<unsigned long long>(prov["seed"].get<std::uint64_t>()));
}

json read_dataset_provenance(const fs::path& dir) {
  const auto path = dir / "provenance.json";
  return fs::exists(path) ? read_json_file(path) : json::object();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
};

int run_synth(const SynthArgs& a) {
  write_synthetic_movielens(a.out, a.spec);
  std::fprintf(stderr, "wrote synthetic MovieLens-format tables to %s\n", a.out.c_str());
  return 0;
}

struct PrepareArgs {
  std::string out;
};

int run_prepare(const Globals& g, const PrepareArgs& a) {
  const auto cfg = load_app_config(g);
  auto prov = provenance(cfg, "prepare");
  print_header(prov);
  const auto format = cfg.format();
  if (!format) throw ConfigError("config has no \"data\" section describing the input tables");
  PrepareSummary summary;
  const auto ds = prepare_dataset(*format, cfg.pipeline, &summary);
  prov["format"] = format->to_json();
  prov["pipeline"] = cfg.to_json()["pipeline"];
  prov["load"] = {{"rating_lines", summary.load.rating_lines},
                  {"malformed_ratings", summary.load.malformed_ratings},
                  {"malformed_users", summary.load.malformed_users},
                  {"malformed_items", summary.load.malformed_items},
                  {"ratings_after_dedup", summary.ratings_after_dedup},
                  {"items_without_year", summary.items_without_year},
                  {"dropped_histories", summary.dropped_histories}};
  write_dataset(a.out, ds, prov);
  std::fprintf(stderr, "ratings %zu (malformed %zu), after dedup %zu, dropped histories %zu\n",
               summary.load.rating_lines, summary.load.malformed_ratings,
               summary.ratings_after_dedup, summary.dropped_histories);
  for (std::size_t c = 0; c < kCellCount; ++c) {
    std::fprintf(stderr, "  %-32s %zu episodes\n", cell_label(c).c_str(), ds.cells[c].size());
  }
  std::fprintf(stderr, "dataset digest %s\n", to_hex(ds.digest()).c_str());
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string method = "meta";
  std::size_t checkpoint_every = 5;
};

int run_train(const Globals& g, const TrainArgs& a) {
  const auto cfg = load_app_config(g);
  auto prov = provenance(cfg, "train");
  print_header(prov);
  const auto ds = read_dataset(a.dataset);
  const auto ds_prov = read_dataset_provenance(a.dataset);
  prov["dataset_digest"] = to_hex(ds.digest());
  prov["method"] = a.method;
  if (ds_prov.contains("format")) prov["format"] = ds_prov["format"];
  fs::create_directories(a.out);

  auto save = [&](const TrainState& st, const fs::path& path) {
    Checkpoint c{cfg.model, ds.schema, st, prov};
    save_checkpoint(path, c);
  };
  auto observer = [&](const TrainState& st) {
    const auto& r = st.loss_history.back();
    std::fprintf(stderr, "epoch %zu/%zu support_loss %.6f query_loss %.6f %.2fs\n", r.epoch,
                 cfg.training.max_epochs, r.support_loss, r.query_loss, r.seconds);
    if (a.checkpoint_every > 0 && st.epoch % a.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04zu.json", st.epoch);
      save(st, fs::path(a.out) / name);
    }
  };

  const auto& episodes = ds.training_cell();
  TrainState st;
  if (a.method == "meta") {
    st = train(episodes, cfg.training, cfg.model, ds.schema, observer);
  } else {
    st = train_joint_baseline(episodes, cfg.training, cfg.model, ds.schema, observer);
  }
  for (const auto& w : st.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto path = fs::path(a.out) / "checkpoint.json";
  save(st, path);
  std::fprintf(stderr, "stopped after %zu epochs; checkpoint %s\n", st.epoch,
               path.string().c_str());
  return 0;
}

struct EvaluateArgs {
  std::string dataset;
  std::string checkpoint;
  std::string baseline;
  std::string out;
  std::size_t local_steps = 1;
  std::size_t max_sweep_steps = 5;
};

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  const auto cfg = load_app_config(g);
  auto prov = provenance(cfg, "evaluate");
  print_header(prov);
  const auto ds = read_dataset(a.dataset);
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.schema.digest() != ds.schema.digest()) {
    throw SchemaError("checkpoint schema does not match the dataset");
  }
  prov["checkpoint"] = a.checkpoint;
  prov["dataset_digest"] = to_hex(ds.digest());

  EvalOptions opt;
  opt.alpha = cfg.training.alpha;
  opt.local_steps = a.local_steps;
  opt.max_sweep_steps = a.max_sweep_steps;
  opt.rating_min = cfg.model.rating_min;
  opt.rating_max = cfg.model.rating_max;
  opt.threads = std::max<std::size_t>(1, cfg.training.threads);
  opt.method = "MeLU-" + std::to_string(a.local_steps);
  const auto report = evaluate(ckpt.state.params, ds, opt);

  std::optional<EvalReport> joint;
  if (!a.baseline.empty()) {
    const auto base = load_checkpoint(a.baseline);
    EvalOptions bopt = opt;
    bopt.method = "joint";
    bopt.local_steps = 0;
    bopt.max_sweep_steps = 0;
    joint = evaluate(base.state.params, ds, bopt);
    prov["baseline_checkpoint"] = a.baseline;
  }
  write_report(a.out, report, joint ? &*joint : nullptr, prov);
  for (std::size_t c = 0; c < kCellCount; ++c) {
    if (!report.cells[c]) continue;
    const auto& m = *report.cells[c];
    std::printf("%-32s users %5zu  MAE %.4f  nDCG@1 %.4f  nDCG@3 %.4f", cell_label(c).c_str(),
                m.users, m.mae, m.ndcg1, m.ndcg3);
    if (joint && joint->cells[c]) std::printf("  joint MAE %.4f", joint->cells[c]->mae);
    std::printf("\n");
  }
  return 0;
}

struct EvidenceArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
};

std::vector<RatingPair> existing_pairs(const PartitionedDataset& ds) {
  std::vector<RatingPair> pairs;
  for (const auto& e : ds.training_cell()) {
    const auto user = std::make_shared<const Profile>(e.user);
    for (const auto* set : {&e.support, &e.query}) {
      for (const auto& r : *set) pairs.push_back({user, r.item, r.rating});
    }
  }
  return pairs;
}

int run_select_evidence(const Globals& g, const EvidenceArgs& a) {
  const auto cfg = load_app_config(g);
  auto prov = provenance(cfg, "select-evidence");
  print_header(prov);
  const auto ds = read_dataset(a.dataset);
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto pairs = existing_pairs(ds);
  if (pairs.empty()) throw DataError("the training cell has no rating pairs");

  auto scores = item_values(pairs, ckpt.state.params, cfg.training.alpha,
                            cfg.evidence.local_steps, cfg.evidence.threads);
  score_items(scores);
  const auto gradient = top_k_candidates(scores, cfg.evidence.top_k);
  const auto pop_scores = popularity_scores(pairs);
  const auto popular = popularity_candidates(pairs, cfg.evidence.top_k);

  std::map<std::int64_t, std::string> titles;
  for (const auto& [id, info] : ds.item_info) titles[id] = info.title;
  fs::create_directories(a.out);
  {
    std::ofstream out(fs::path(a.out) / "gradient_candidates.tsv");
    write_candidate_table(out, gradient, scores, titles);
  }
  {
    std::ofstream out(fs::path(a.out) / "popularity_candidates.tsv");
    write_candidate_table(out, popular, pop_scores, titles);
  }
  prov["checkpoint"] = a.checkpoint;
  write_json_file(fs::path(a.out) / "candidates.json",
                  {{"gradient", gradient}, {"popularity", popular}, {"provenance", prov}}, 2);
  std::printf("gradient x popularity top-%zu:\n", gradient.size());
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    std::printf("%3zu  %s\n", i + 1, titles[gradient[i]].c_str());
  }
  std::printf("overlap with the popularity list: %zu/%zu\n", overlap(gradient, popular),
              gradient.size());
  return 0;
}

struct ServeArgs {
  std::string dataset;
  std::string checkpoint;
  std::string candidates;
  std::string host;
  int port = -1;
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int run_serve(const Globals& g, const ServeArgs& a) {
  const auto cfg = load_app_config(g);
  const auto prov = provenance(cfg, "serve");
  print_header(prov);
  const auto ds = read_dataset(a.dataset);
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.schema.digest() != ds.schema.digest()) {
    throw SchemaError("checkpoint schema does not match the dataset");
  }
  const auto cands = read_json_file(a.candidates);

  auto snap = std::make_shared<ServiceSnapshot>();
  snap->model = ckpt.model;
  snap->schema = ckpt.schema;
  snap->params = ckpt.state.params;
  const auto ds_prov = read_dataset_provenance(a.dataset);
  if (ds_prov.contains("format")) {
    snap->user_fields = FormatConfig::from_json(ds_prov["format"]).user_fields;
  }
  snap->items = ds.items;
  snap->item_info = ds.item_info;
  cands.at("popularity").get_to(snap->popularity_candidates);
  cands.at("gradient").get_to(snap->gradient_candidates);
  snap->alpha = cfg.training.alpha;
  snap->local_steps = cfg.service.local_steps;
  snap->evidence_count = cfg.service.evidence_count;
  snap->recommendation_count = cfg.service.recommendation_count;

  auto service = std::make_shared<OnboardingService>(snap, cfg.service.ab_seed,
                                                     cfg.service.session_log);
  HttpFrontend frontend(service, cfg.service.static_dir);
  const std::string host = a.host.empty() ? cfg.service.host : a.host;
  const int port = frontend.start(host, a.port >= 0 ? a.port : cfg.service.port);
  std::fprintf(stderr, "serving on http://%s:%d, session log %s\n", host.c_str(), port,
               cfg.service.session_log.string().c_str());
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  frontend.stop();
  return 0;
}

struct SummarizeArgs {
  std::string log;
};

int run_summarize(const SummarizeArgs& a) {
  for (const auto& [tag, s] : aggregate_session_log(a.log)) {
    auto opt = [](const std::optional<double>& v) { return v ? *v : 0.0; };
    std::printf("strategy %s: sessions %zu, evidence selected %.2f (mean rating %.3f), "
                "recommendations selected %.2f (mean rating %.3f), nDCG@1 %.4f\n",
                tag.c_str(), s.sessions, s.mean_evidence_selected, opt(s.mean_evidence_rating),
                s.mean_recommendations_selected, opt(s.mean_recommendation_rating),
                s.mean_ndcg1);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned user preference estimator for cold-start recommendation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for training, partitioning and A/B assignment");
  app.add_option("--threads", g.threads, "Worker threads (0 keeps the config value)");
  app.set_version_flag("--version", std::string(MELU_VERSION));

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Write synthetic MovieLens-format tables");
  s_synth->add_option("--out", synth.out)->required();
  s_synth->add_option("--users", synth.spec.users);
  s_synth->add_option("--items", synth.spec.items);
  s_synth->add_option("--min-history", synth.spec.min_history);
  s_synth->add_option("--max-history", synth.spec.max_history);
  s_synth->add_option("--synthetic-seed", synth.spec.seed);

  PrepareArgs prep;
  auto* s_prep = app.add_subcommand("prepare", "Load tables and build the four partitions");
  s_prep->add_option("--out", prep.out, "Dataset directory")->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Meta-train (or train the joint baseline)");
  s_train->add_option("--dataset", tr.dataset)->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", tr.out, "Checkpoint directory")->required();
  s_train->add_option("--method", tr.method)->check(CLI::IsMember({"meta", "joint"}));
  s_train->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints");

  EvaluateArgs ev;
  auto* s_eval = app.add_subcommand("evaluate", "Per-cell MAE and nDCG, sweep and breakdown");
  s_eval->add_option("--dataset", ev.dataset)->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--baseline", ev.baseline, "Joint baseline checkpoint")
      ->check(CLI::ExistingFile);
  s_eval->add_option("--out", ev.out, "Report directory")->required();
  s_eval->add_option("--local-steps", ev.local_steps);
  s_eval->add_option("--max-sweep-steps", ev.max_sweep_steps);

  EvidenceArgs evid;
  auto* s_evid = app.add_subcommand("select-evidence", "Score items and emit candidate lists");
  s_evid->add_option("--dataset", evid.dataset)->required()->check(CLI::ExistingDirectory);
  s_evid->add_option("--checkpoint", evid.checkpoint)->required()->check(CLI::ExistingFile);
  s_evid->add_option("--out", evid.out)->required();

  ServeArgs sv;
  auto* s_serve = app.add_subcommand("serve", "Run the onboarding HTTP service");
  s_serve->add_option("--dataset", sv.dataset)->required()->check(CLI::ExistingDirectory);
  s_serve->add_option("--checkpoint", sv.checkpoint)->required()->check(CLI::ExistingFile);
  s_serve->add_option("--candidates", sv.candidates, "candidates.json from select-evidence")
      ->required()
      ->check(CLI::ExistingFile);
  s_serve->add_option("--host", sv.host);
  s_serve->add_option("--port", sv.port);

  SummarizeArgs sum;
  auto* s_sum = app.add_subcommand("summarize-sessions", "Per-strategy survey measures");
  s_sum->add_option("--log", sum.log)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s_synth) return run_synth(synth);
    if (*s_prep) return run_prepare(g, prep);
    if (*s_train) return run_train(g, tr);
    if (*s_eval) return run_evaluate(g, ev);
    if (*s_evid) return run_select_evidence(g, evid);
    if (*s_serve) return run_serve(g, sv);
    if (*s_sum) return run_summarize(sum);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
