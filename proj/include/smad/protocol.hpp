#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "smad/core.hpp"
#include "smad/inference.hpp"
#include "smad/metrics.hpp"
#include "smad/model.hpp"

namespace smad::protocol {

struct FewShotSpec {
  int k_per_class = 0;
  RngSeed seed{};
};

struct InjectionResult {
  core::Dataset train;
  core::Dataset test;
};

/// Moves k samples of every test class (bona fide included) into the training
/// set, chosen uniformly from the seed. Classes are visited in label order and
/// moved samples are appended to train in test order. Throws a numeric error
/// naming the class when a test class has k or fewer members.
InjectionResult inject_few_shot(const core::Dataset& train, const core::Dataset& test,
                                const FewShotSpec& spec);

enum class Mode {
  CrossDatabase,  // train on one domain, test on another
  InDomain,       // subject-disjoint split of a single domain
};

struct DataSource {
  std::optional<core::SyntheticSpec> synthetic;
  /// As written in the config (hashed), and resolved against the config's
  /// directory (opened).
  std::string train_manifest;
  std::string test_manifest;
  std::filesystem::path train_manifest_path;
  std::filesystem::path test_manifest_path;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Mode mode = Mode::CrossDatabase;
  DataSource data;
  double train_fraction = 0.6;  // in-domain split
  RngSeed seed{};
  model::TrainConfig train;
  inference::InferenceConfig inference;
  FewShotSpec fewshot;
  metrics::Pooling pooling = metrics::Pooling::Pooled;

  /// Sets the base seed and re-derives every component seed from it.
  void apply_seed(RngSeed base);
};

/// Parses an experiment document. Relative manifest paths resolve against
/// `base_dir`. Missing required fields and unknown fields are validation
/// errors naming the field.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc,
                                             const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Canonical document (manifest paths as written).
nlohmann::json to_json(const ExperimentConfig& cfg);

/// SHA-256 of the canonical config document.
std::string config_hash(const ExperimentConfig& cfg);

struct PreparedData {
  core::Dataset train;
  core::Dataset test;
};

/// Loads or generates the datasets, splits (in-domain) and injects few-shot
/// samples.
PreparedData prepare_data(const ExperimentConfig& cfg);

struct ExperimentOutcome {
  PreparedData data;
  model::TrainResult training;
  inference::ScoredDataset scored;
  metrics::EvalReport report;
  double decision_threshold = 0.0;
};

/// Evaluation of given params on already-prepared data.
struct Evaluation {
  inference::ScoredDataset scored;
  metrics::EvalReport report;
  double decision_threshold = 0.0;
};
Evaluation evaluate(const ExperimentConfig& cfg, const model::ModelParams& params,
                    const PreparedData& data);

/// inject -> train -> select templates -> score -> metrics. Errors carry the
/// stage name.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

/// Writes report.json, det.csv, scores.csv, history.csv and checkpoint.json
/// into `dir` (created). Returns the written file names.
std::vector<std::string> persist_outcome(const ExperimentOutcome& outcome,
                                         const std::filesystem::path& dir);
std::vector<std::string> persist_evaluation(const Evaluation& evaluation,
                                            const std::filesystem::path& dir);

struct SweepRow {
  int k = 0;
  double d_eer = 0.0;
  double bpcer10 = 0.0;
  double bpcer20 = 0.0;
};

/// The config one sweep row runs: k_per_class = k and base seed
/// derive_seed(cfg.seed, k).
ExperimentConfig sweep_row_config(const ExperimentConfig& cfg, int k);

/// One experiment per k, in ks order. Aborts on the first failing row with an
/// error naming k.
std::vector<SweepRow> few_shot_sweep(const ExperimentConfig& cfg, std::span<const int> ks);

/// CSV `k,d_eer,bpcer10,bpcer20`.
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

void write_history_csv(std::ostream& out, std::span<const double> history);

}  // namespace smad::protocol
