#include "smad/cli.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smad/core.hpp"
#include "smad/digest.hpp"
#include "smad/error.hpp"
#include "smad/inference.hpp"
#include "smad/model.hpp"
#include "smad/projection.hpp"
#include "smad/protocol.hpp"

#ifndef SMAD_VERSION
#define SMAD_VERSION "0.0.0"
#endif

namespace smad::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string manifest;
  std::vector<int> ks = {0, 5, 10, 15, 20};
  std::vector<int> grid = {1, 2, 4, 8, 12};
  projection::TsneConfig tsne;
};

// One command invocation: names the run directory and writes
// run_manifest.json at the end.
class Run {
 public:
  Run(std::string command, std::string config_hash)
      : command_(std::move(command)),
        config_hash_(std::move(config_hash)),
        started_(std::chrono::steady_clock::now()) {}

  void input(const std::string& path) { inputs_[path] = file_sha256_hex(path); }
  void seed(const std::string& name, RngSeed s) { seeds_[name] = s.value; }
  void param(const std::string& name, json value) { params_[name] = std::move(value); }

  // Depends on the command, config, arguments and input contents only.
  fs::path dir(const fs::path& out_root) const {
    const json identity = {{"command", command_},
                           {"config_hash", config_hash_},
                           {"params", params_},
                           {"inputs", inputs_}};
    return out_root / (command_ + "-" + sha256_hex(identity.dump()).substr(0, 12));
  }

  void add_outputs(const std::vector<std::string>& files) {
    outputs_.insert(outputs_.end(), files.begin(), files.end());
  }

  void finish(const fs::path& dir) const {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started_;
    json manifest = {{"command", command_},
                     {"version", SMAD_VERSION},
                     {"config_hash", config_hash_},
                     {"params", params_},
                     {"seeds", seeds_},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"wall_clock_seconds", elapsed.count()}};
    std::ofstream out(dir / "run_manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) throw io_error("cannot write run manifest in '" + dir.string() + "'");
  }

 private:
  std::string command_;
  std::string config_hash_;
  std::chrono::steady_clock::time_point started_;
  json seeds_ = json::object();
  json inputs_ = json::object();
  json params_ = json::object();
  std::vector<std::string> outputs_;
};

fs::path make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  return out;
}

const std::string& require(const std::string& value, const std::string& flag,
                           const std::string& command) {
  if (value.empty()) throw validation_error(command + " requires " + flag);
  return value;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw parse_error("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

protocol::ExperimentConfig load_config(const Options& o, const std::string& command) {
  auto cfg = protocol::load_experiment_config(require(o.config, "--config", command));
  if (o.seed) cfg.apply_seed(RngSeed{*o.seed});
  return cfg;
}

Run start_run(const std::string& command, const Options& o,
              const protocol::ExperimentConfig& cfg) {
  Run run(command, protocol::config_hash(cfg));
  run.input(o.config);
  if (!cfg.data.synthetic) {
    run.input(cfg.data.train_manifest_path.string());
    if (cfg.mode == protocol::Mode::CrossDatabase) run.input(cfg.data.test_manifest_path.string());
  }
  run.seed("base", cfg.seed);
  run.seed("train", cfg.train.seed);
  run.seed("templates", cfg.inference.template_seed);
  run.seed("fewshot", cfg.fewshot.seed);
  run.seed("split", derive_seed(cfg.seed, "split"));
  return run;
}

void finish(const Run& run, const fs::path& dir, std::ostream& out) {
  run.finish(dir);
  out << dir.string() << '\n';

}

int cmd_generate(const Options& o, std::ostream& out) {
  const auto& path = require(o.config, "--config", "generate");
  auto spec = core::synthetic_spec_from_json(read_json(path));
  if (o.seed) spec.seed = RngSeed{*o.seed};

  Run run("generate", sha256_hex(core::to_json(spec).dump()));
  run.input(path);
  run.seed("base", spec.seed);
  const auto pair = core::generate_synthetic(spec);

  const auto dir = make_dir(run.dir(o.out));
  core::save_manifest(dir / "source.csv", pair.source);
  core::save_manifest(dir / "target.csv", pair.target);
  run.add_outputs({"source.csv", "target.csv"});
  finish(run, dir, out);
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o, "train");
  auto run = start_run("train", o, cfg);

  const auto data = protocol::prepare_data(cfg);
  std::vector<std::string> holdout;
  for (const auto& e : data.test.embeddings()) holdout.push_back(e.id);
  model::TrainResult result;
  try {
    result = model::train(data.train, cfg.train, holdout);
  } catch (const Error& e) {
    throw with_stage("train", e);
  }
  err << "train: " << result.history.size() << " epochs, final loss "
      << core::format_double(result.history.empty() ? 0.0 : result.history.back()) << '\n';

  const auto dir = make_dir(run.dir(o.out));
  model::save_checkpoint(dir / "checkpoint.json", result.params);
  auto history = open_output(dir / "history.csv");
  protocol::write_history_csv(history, result.history);
  history.close();
  run.add_outputs({"checkpoint.json", "history.csv"});
  finish(run, dir, out);
  return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto& checkpoint = require(o.checkpoint, "--checkpoint", "evaluate");
  const auto cfg = load_config(o, "evaluate");
  auto run = start_run("evaluate", o, cfg);
  run.input(checkpoint);

  const auto params = model::load_checkpoint(checkpoint);
  const auto data = protocol::prepare_data(cfg);
  const auto evaluation = protocol::evaluate(cfg, params, data);
  err << "evaluate: d_eer " << core::format_double(evaluation.report.d_eer) << '\n';

  const auto dir = make_dir(run.dir(o.out));
  run.add_outputs(protocol::persist_evaluation(evaluation, dir));
  finish(run, dir, out);
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o, "sweep");
  auto run = start_run("sweep", o, cfg);
  run.param("ks", o.ks);
  for (int k : o.ks) {
    if (k < 0) throw validation_error("sweep k=" + std::to_string(k) + ": k must be >= 0");
    run.seed("k=" + std::to_string(k), protocol::sweep_row_config(cfg, k).seed);
  }

  const auto rows = protocol::few_shot_sweep(cfg, o.ks);
  for (const auto& r : rows) {
    err << "sweep: k=" << r.k << " d_eer " << core::format_double(r.d_eer) << " bpcer10 "
        << core::format_double(r.bpcer10) << '\n';
  }

  const auto dir = make_dir(run.dir(o.out));
  auto csv = open_output(dir / "sweep.csv");
  protocol::write_sweep_csv(csv, rows);
  csv.close();
  run.add_outputs({"sweep.csv"});
  finish(run, dir, out);
  return 0;
}

int cmd_grid_templates(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o, "grid-templates");
  auto run = start_run("grid-templates", o, cfg);
  run.param("grid", o.grid);
  for (int n : o.grid) {
    if (n < 1) throw validation_error("grid entry " + std::to_string(n) + " must be >= 1");
  }

  const auto data = protocol::prepare_data(cfg);
  model::ModelParams params;
  if (!o.checkpoint.empty()) {
    run.input(o.checkpoint);
    params = model::load_checkpoint(o.checkpoint);
  } else {
    std::vector<std::string> holdout;
    for (const auto& e : data.test.embeddings()) holdout.push_back(e.id);
    try {
      params = model::train(data.train, cfg.train, holdout).params;
    } catch (const Error& e) {
      throw with_stage("train", e);
    }
  }

  std::vector<inference::GridRow> rows;
  try {
    rows = inference::template_grid_search(params, data.train.bona_fide_only(), data.test, o.grid,
                                           cfg.inference.template_seed, cfg.pooling);
  } catch (const Error& e) {
    throw with_stage("templates", e);
  }
  for (const auto& r : rows) {
    err << "grid-templates: n=" << r.n_templates << " d_eer " << core::format_double(r.d_eer)
        << (r.is_best ? " (best)" : "") << '\n';
  }

  const auto dir = make_dir(run.dir(o.out));
  auto csv = open_output(dir / "grid.csv");
  inference::write_grid_csv(csv, rows);
  csv.close();
  run.add_outputs({"grid.csv"});
  finish(run, dir, out);
  return 0;
}

int cmd_project(const Options& o, std::ostream& out, std::ostream& err) {
  const auto& checkpoint = require(o.checkpoint, "--checkpoint", "project");
  const auto& manifest = require(o.manifest, "--manifest", "project");
  auto tsne = o.tsne;
  tsne.seed = RngSeed{o.seed.value_or(0)};

  const json options = {{"perplexity", tsne.perplexity},
                        {"iterations", tsne.iterations},
                        {"learning_rate", tsne.learning_rate},
                        {"seed", tsne.seed.value}};
  Run run("project", sha256_hex(options.dump()));
  run.input(checkpoint);
  run.input(manifest);
  run.seed("tsne", tsne.seed);

  const auto params = model::load_checkpoint(checkpoint);
  const auto ds = core::load_manifest(manifest);
  if (params.input_dim() != ds.dim()) {
    throw validation_error("checkpoint expects dimension " + std::to_string(params.input_dim()) +
                           " but manifest has " + std::to_string(ds.dim()));
  }
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.dim()));
  std::vector<projection::PointMeta> meta;
  meta.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds[i];
    inputs.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(e.vector.data(), static_cast<Eigen::Index>(ds.dim()));
    meta.push_back({e.id, e.label.to_string(), e.domain});
  }
  const auto result = projection::tsne_project(model::forward_batch(params, inputs), tsne);
  err << "project: " << ds.size() << " points, kl " << core::format_double(result.kl_final)
      << '\n';

  const auto dir = make_dir(run.dir(o.out));
  projection::export_projection(dir / "projection.csv", result.layout, meta);
  run.add_outputs({"projection.csv"});
  finish(run, dir, out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Few-shot morphing attack detection toolkit", "smad"};
  app.set_version_flag("--version", SMAD_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "Experiment config (synthetic spec for generate)");
  app.add_option("--out", o.out, "Root directory for run outputs")->capture_default_str();
  app.add_option("--seed", o.seed, "Override the config seed");

  auto* generate = app.add_subcommand("generate", "Write a synthetic source/target pair");
  auto* train = app.add_subcommand("train", "Train an embedding head");
  auto* evaluate = app.add_subcommand("evaluate", "Score the test set with a checkpoint");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
  auto* sweep = app.add_subcommand("sweep", "Few-shot sweep over k");
  sweep->add_option("--ks", o.ks, "Comma-separated k values")->delimiter(',');
  auto* grid = app.add_subcommand("grid-templates", "Search the template count");
  grid->add_option("--grid", o.grid, "Comma-separated template counts")->delimiter(',');
  grid->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON (trains when omitted)");
  auto* project = app.add_subcommand("project", "t-SNE projection of embedded samples");
  project->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required();
  project->add_option("--manifest", o.manifest, "Manifest CSV to embed")->required();
  project->add_option("--perplexity", o.tsne.perplexity)->capture_default_str();
  project->add_option("--iterations", o.tsne.iterations)->capture_default_str();
  project->add_option("--learning-rate", o.tsne.learning_rate)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : exit_code_for(ErrorKind::Validation);
  }

  try {
    if (*generate) return cmd_generate(o, out);
    if (*train) return cmd_train(o, out, err);
    if (*evaluate) return cmd_evaluate(o, out, err);
    if (*sweep) return cmd_sweep(o, out, err);
    if (*grid) return cmd_grid_templates(o, out, err);
    return cmd_project(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(ErrorKind::Io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace smad::cli
