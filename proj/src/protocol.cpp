#include "smad/protocol.hpp"

#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "json_fields.hpp"
#include "smad/digest.hpp"
#include "smad/error.hpp"

namespace smad::protocol {

namespace {

using json = nlohmann::json;
using detail::JsonFields;

template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw with_stage(stage, e);
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  return out;
}

std::string mode_name(Mode mode) {
  return mode == Mode::CrossDatabase ? "cross_database" : "in_domain";
}

loss::LossConfig loss_from_json(const json& doc) {
  JsonFields f(doc, "loss");
  loss::LossConfig cfg;
  cfg.margin = f.get_or<double>("margin", cfg.margin);
  cfg.mining_mode = loss::parse_mining_mode(f.get_or<std::string>("mining", "semihard"));
  f.reject_unknown();
  if (!(cfg.margin >= 0.0)) throw validation_error("field 'loss.margin' must be >= 0");
  return cfg;
}

model::TrainConfig train_from_json(const json& doc) {
  JsonFields f(doc, "train");
  model::TrainConfig cfg;
  cfg.epochs = f.get_or<int>("epochs", cfg.epochs);
  cfg.identities_per_batch = f.get_or<int>("identities_per_batch", cfg.identities_per_batch);
  cfg.samples_per_identity = f.get_or<int>("samples_per_identity", cfg.samples_per_identity);
  if (f.has("batch_size") && f.get<int>("batch_size") != cfg.batch_size()) {
    throw validation_error(
        "field 'train.batch_size' must equal identities_per_batch * samples_per_identity");
  }
  cfg.adam.learning_rate = f.get_or<double>("learning_rate", cfg.adam.learning_rate);
  cfg.adam.beta1 = f.get_or<double>("beta1", cfg.adam.beta1);
  cfg.adam.beta2 = f.get_or<double>("beta2", cfg.adam.beta2);
  cfg.adam.epsilon = f.get_or<double>("epsilon", cfg.adam.epsilon);
  cfg.hidden_dims = f.get_or<std::vector<std::size_t>>("hidden_dims", cfg.hidden_dims);
  cfg.embedding_dim = f.get_or<std::size_t>("embedding_dim", cfg.embedding_dim);
  cfg.l2_normalize_output = f.get_or<bool>("l2_normalize_output", cfg.l2_normalize_output);
  if (f.has("vector_augment")) {
    JsonFields a(f.raw("vector_augment"), "train.vector_augment");
    model::VectorAugment aug;
    aug.noise_sigma = a.get_or<double>("noise_sigma", 0.0);
    aug.dropout_prob = a.get_or<double>("dropout_prob", 0.0);
    a.reject_unknown();
    cfg.vector_augment = aug;
  }
  f.reject_unknown();
  cfg.validate();
  return cfg;
}

json train_to_json(const model::TrainConfig& cfg) {
  json doc;
  doc["epochs"] = cfg.epochs;
  doc["identities_per_batch"] = cfg.identities_per_batch;
  doc["samples_per_identity"] = cfg.samples_per_identity;
  doc["batch_size"] = cfg.batch_size();
  doc["learning_rate"] = cfg.adam.learning_rate;
  doc["beta1"] = cfg.adam.beta1;
  doc["beta2"] = cfg.adam.beta2;
  doc["epsilon"] = cfg.adam.epsilon;
  doc["hidden_dims"] = cfg.hidden_dims;
  doc["embedding_dim"] = cfg.embedding_dim;
  doc["l2_normalize_output"] = cfg.l2_normalize_output;
  if (cfg.vector_augment) {
    doc["vector_augment"] = {{"noise_sigma", cfg.vector_augment->noise_sigma},
                             {"dropout_prob", cfg.vector_augment->dropout_prob}};
  }
  return doc;
}

std::set<std::string> domains_of(const core::Dataset& ds) {
  std::set<std::string> out;
  for (const auto& e : ds.embeddings()) out.insert(e.domain);
  return out;
}

}  // namespace

InjectionResult inject_few_shot(const core::Dataset& train, const core::Dataset& test,
                                const FewShotSpec& spec) {
  if (spec.k_per_class < 0) throw validation_error("k_per_class must be >= 0");
  if (train.dim() != test.dim()) {
    throw validation_error("train and test dimensions differ (" + std::to_string(train.dim()) +
                           " vs " + std::to_string(test.dim()) + ")");
  }
  if (spec.k_per_class == 0) return InjectionResult{train, test};

  const auto k = static_cast<std::size_t>(spec.k_per_class);
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < test.size(); ++i) by_class[test[i].label.to_string()].push_back(i);

  Rng rng(spec.seed);
  std::vector<bool> moved(test.size(), false);
  for (const auto& [name, members] : by_class) {
    if (members.size() <= k) {
      throw numeric_error("cannot inject k=" + std::to_string(k) + " samples of class '" + name +
                          "': the test set holds only " + std::to_string(members.size()));
    }
    for (std::size_t pick : rng.sample_without_replacement(members.size(), k)) {
      moved[members[pick]] = true;
    }
  }

  std::vector<core::LabeledEmbedding> new_train = train.embeddings();
  std::vector<core::LabeledEmbedding> new_test;
  for (std::size_t i = 0; i < test.size(); ++i) {
    (moved[i] ? new_train : new_test).push_back(test[i]);
  }
  return InjectionResult{core::Dataset(train.name(), train.dim(), std::move(new_train)),
                         core::Dataset(test.name(), test.dim(), std::move(new_test))};
}

void ExperimentConfig::apply_seed(RngSeed base) {
  seed = base;
  train.seed = derive_seed(base, "train");
  inference.template_seed = derive_seed(base, "templates");
  fewshot.seed = derive_seed(base, "fewshot");
}

ExperimentConfig experiment_config_from_json(const json& doc,
                                             const std::filesystem::path& base_dir) {
  JsonFields f(doc, "");
  ExperimentConfig cfg;
  cfg.name = f.get_or<std::string>("name", cfg.name);

  const auto mode = f.get<std::string>("mode");
  if (mode == "cross_database") {
    cfg.mode = Mode::CrossDatabase;
  } else if (mode == "in_domain") {
    cfg.mode = Mode::InDomain;
  } else {
    throw validation_error("field 'mode' must be 'cross_database' or 'in_domain'");
  }

  {
    JsonFields d(f.raw("data"), "data");
    if (d.has("synthetic")) {
      try {
        cfg.data.synthetic = core::synthetic_spec_from_json(d.raw("synthetic"));
      } catch (const Error& e) {
        throw Error(e.kind(), std::string("data.synthetic: ") + e.what());
      }
    } else {
      cfg.data.train_manifest = d.get<std::string>("train_manifest");
      cfg.data.train_manifest_path = base_dir / cfg.data.train_manifest;
      if (cfg.mode == Mode::CrossDatabase) {
        cfg.data.test_manifest = d.get<std::string>("test_manifest");
        cfg.data.test_manifest_path = base_dir / cfg.data.test_manifest;
      }
    }
    d.reject_unknown();
  }

  cfg.train_fraction = f.get_or<double>("train_fraction", cfg.train_fraction);
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw validation_error("field 'train_fraction' must lie in (0, 1)");
  }
  const RngSeed seed{f.get_u64("seed")};

  if (f.has("train")) cfg.train = train_from_json(f.raw("train"));
  if (f.has("loss")) cfg.train.loss = loss_from_json(f.raw("loss"));

  if (f.has("inference")) {
    JsonFields i(f.raw("inference"), "inference");
    cfg.inference.n_templates = i.get_or<int>("n_templates", cfg.inference.n_templates);
    if (i.has("threshold")) cfg.inference.threshold = i.get<double>("threshold");
    i.reject_unknown();
    if (cfg.inference.n_templates < 1) {
      throw validation_error("field 'inference.n_templates' must be >= 1");
    }
  }
  if (f.has("fewshot")) {
    JsonFields k(f.raw("fewshot"), "fewshot");
    cfg.fewshot.k_per_class = k.get_or<int>("k_per_class", 0);
    k.reject_unknown();
    if (cfg.fewshot.k_per_class < 0) {
      throw validation_error("field 'fewshot.k_per_class' must be >= 0");
    }
  }
  cfg.pooling = metrics::parse_pooling(f.get_or<std::string>("pooling", "pooled"));
  f.reject_unknown();

  cfg.apply_seed(seed);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open config '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw validation_error("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(doc, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  doc["mode"] = mode_name(cfg.mode);
  if (cfg.data.synthetic) {
    doc["data"] = {{"synthetic", core::to_json(*cfg.data.synthetic)}};
  } else {
    doc["data"] = {{"train_manifest", cfg.data.train_manifest}};
    if (cfg.mode == Mode::CrossDatabase) doc["data"]["test_manifest"] = cfg.data.test_manifest;
  }
  doc["train_fraction"] = cfg.train_fraction;
  doc["seed"] = cfg.seed.value;
  doc["train"] = train_to_json(cfg.train);
  doc["loss"] = {{"margin", cfg.train.loss.margin},
                 {"mining", loss::to_string(cfg.train.loss.mining_mode)}};
  doc["inference"] = {{"n_templates", cfg.inference.n_templates}};
  if (cfg.inference.threshold) doc["inference"]["threshold"] = *cfg.inference.threshold;
  doc["fewshot"] = {{"k_per_class", cfg.fewshot.k_per_class}};
  doc["pooling"] = metrics::to_string(cfg.pooling);
  return doc;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

PreparedData prepare_data(const ExperimentConfig& cfg) {
  auto base = in_stage("data", [&]() -> PreparedData {
    if (cfg.mode == Mode::CrossDatabase) {
      if (cfg.data.synthetic) {
        auto pair = core::generate_synthetic(*cfg.data.synthetic);
        return PreparedData{std::move(pair.source), std::move(pair.target)};
      }
      return PreparedData{core::load_manifest(cfg.data.train_manifest_path),
                          core::load_manifest(cfg.data.test_manifest_path)};
    }
    core::Dataset whole = cfg.data.synthetic
                              ? core::generate_synthetic(*cfg.data.synthetic).source
                              : core::load_manifest(cfg.data.train_manifest_path);
    auto split = core::split_subject_disjoint(whole, cfg.train_fraction,
                                              derive_seed(cfg.seed, "split"));
    return PreparedData{std::move(split.train), std::move(split.test)};
  });

  in_stage("data", [&] {
    if (base.train.dim() != base.test.dim()) {
      throw validation_error("train and test dimensions differ (" +
                             std::to_string(base.train.dim()) + " vs " +
                             std::to_string(base.test.dim()) + ")");
    }
    if (cfg.mode == Mode::CrossDatabase) {
      const auto train_domains = domains_of(base.train);
      for (const auto& d : domains_of(base.test)) {
        if (train_domains.count(d)) {
          throw validation_error("cross-database mode needs distinct domains; '" + d +
                                 "' appears in both train and test");
        }
      }
    }
  });

  return in_stage("fewshot", [&] {
    auto injected = inject_few_shot(base.train, base.test, cfg.fewshot);
    return PreparedData{std::move(injected.train), std::move(injected.test)};
  });
}

Evaluation evaluate(const ExperimentConfig& cfg, const model::ModelParams& params,
                    const PreparedData& data) {
  const auto templates = in_stage("templates", [&] {
    return inference::select_templates(data.train, cfg.inference.n_templates,
                                       cfg.inference.template_seed);
  });
  Evaluation out;
  out.scored = in_stage("score", [&] { return inference::score_dataset(params, data.test, templates); });
  out.report = in_stage("metrics", [&] {
    return metrics::det_and_operating_points(out.scored.scores, cfg.pooling);
  });
  out.decision_threshold = cfg.inference.threshold.value_or(out.report.eer_threshold);
  return out;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  ExperimentOutcome out{prepare_data(cfg), {}, {}, {}, 0.0};

  std::vector<std::string> holdout;
  holdout.reserve(out.data.test.size());
  for (const auto& e : out.data.test.embeddings()) holdout.push_back(e.id);
  out.training = in_stage("train", [&] { return model::train(out.data.train, cfg.train, holdout); });

  auto evaluation = evaluate(cfg, out.training.params, out.data);
  out.scored = std::move(evaluation.scored);
  out.report = std::move(evaluation.report);
  out.decision_threshold = evaluation.decision_threshold;
  return out;
}

std::vector<std::string> persist_evaluation(const Evaluation& evaluation,
                                            const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create '" + dir.string() + "': " + ec.message());

  auto report = open_output(dir / "report.json");
  report << metrics::to_json(evaluation.report).dump(2) << '\n';
  auto det = open_output(dir / "det.csv");
  metrics::write_det_csv(det, evaluation.report);
  auto scores = open_output(dir / "scores.csv");
  inference::write_scores_csv(scores, evaluation.scored, evaluation.decision_threshold);
  return {"report.json", "det.csv", "scores.csv"};
}

std::vector<std::string> persist_outcome(const ExperimentOutcome& outcome,
                                         const std::filesystem::path& dir) {
  auto files =
      persist_evaluation(Evaluation{outcome.scored, outcome.report, outcome.decision_threshold}, dir);
  auto history = open_output(dir / "history.csv");
  write_history_csv(history, outcome.training.history);
  model::save_checkpoint(dir / "checkpoint.json", outcome.training.params);
  files.push_back("history.csv");
  files.push_back("checkpoint.json");
  return files;
}

ExperimentConfig sweep_row_config(const ExperimentConfig& cfg, int k) {
  ExperimentConfig row = cfg;
  row.fewshot.k_per_class = k;
  row.apply_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
  return row;
}

std::vector<SweepRow> few_shot_sweep(const ExperimentConfig& cfg, std::span<const int> ks) {
  if (ks.empty()) throw validation_error("sweep needs at least one k");
  for (int k : ks) {
    if (k < 0) throw validation_error("sweep k must be >= 0 (got " + std::to_string(k) + ")");
  }
  std::vector<SweepRow> rows;
  for (int k : ks) {
    try {
      const auto outcome = run_experiment(sweep_row_config(cfg, k));
      rows.push_back(SweepRow{k, outcome.report.d_eer, outcome.report.bpcer10,
                              outcome.report.bpcer20});
    } catch (const Error& e) {
      throw with_stage("sweep k=" + std::to_string(k), e);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "k,d_eer,bpcer10,bpcer20\n";
  for (const auto& r : rows) {
    out << r.k << ',' << core::format_double(r.d_eer) << ',' << core::format_double(r.bpcer10)
        << ',' << core::format_double(r.bpcer20) << '\n';
  }
}

void write_history_csv(std::ostream& out, std::span<const double> history) {
  out << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << (i + 1) << ',' << core::format_double(history[i]) << '\n';
  }
}

}  // namespace smad::protocol
