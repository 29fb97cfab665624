#include "smad/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include "smad/error.hpp"

namespace smad::model {

namespace {

using json = nlohmann::json;

constexpr const char* kCheckpointFormat = "smad-checkpoint";
constexpr int kCheckpointVersion = 1;

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = inputs^T
  std::vector<Eigen::MatrixXd> preactivations;
  Eigen::MatrixXd output;                   // before normalization, E x B
  Eigen::VectorXd norms;                    // per column
  Eigen::MatrixXd embeddings;               // E x B
};

ForwardCache run_forward(const ModelParams& params, const Eigen::MatrixXd& inputs_t) {
  ForwardCache cache;
  cache.activations.push_back(inputs_t);
  const std::size_t n_layers = params.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weights * cache.activations.back();
    z.colwise() += layer.bias;
    cache.preactivations.push_back(z);
    if (l + 1 < n_layers) {
      cache.activations.push_back(z.cwiseMax(0.0));
    } else {
      cache.output = std::move(z);
    }
  }
  cache.norms = cache.output.colwise().norm().transpose();
  cache.embeddings = cache.output;
  if (params.l2_normalize_output) {
    for (Eigen::Index j = 0; j < cache.embeddings.cols(); ++j) {
      if (cache.norms(j) > 0.0) cache.embeddings.col(j) /= cache.norms(j);
    }
  }
  return cache;
}

void check_input_dim(const ModelParams& params, std::size_t dim) {
  if (params.layers.empty()) throw validation_error("model has no layers");
  if (dim != params.input_dim()) {
    throw validation_error("input dimension " + std::to_string(dim) +
                           " does not match model input dimension " +
                           std::to_string(params.input_dim()));
  }
}

template <typename Fn>
void for_each_tensor(ModelParams& a, const ModelParams& b, Fn&& fn) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    fn(a.layers[l].weights.array(), b.layers[l].weights.array());
    fn(a.layers[l].bias.array(), b.layers[l].bias.array());
  }
}

}  // namespace

std::size_t ModelParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weights.cols());
}

std::size_t ModelParams::embedding_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weights.rows());
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

void ModelParams::validate() const {
  if (layers.empty()) throw validation_error("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0) {
      throw validation_error("layer " + std::to_string(l) + " is empty");
    }
    if (layer.bias.size() != layer.weights.rows()) {
      throw validation_error("layer " + std::to_string(l) + ": bias length does not match rows");
    }
    if (l > 0 && layer.weights.cols() != layers[l - 1].weights.rows()) {
      throw validation_error("layer " + std::to_string(l) + ": input width " +
                             std::to_string(layer.weights.cols()) +
                             " does not match previous output " +
                             std::to_string(layers[l - 1].weights.rows()));
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw numeric_error("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  out.l2_normalize_output = l2_normalize_output;
  for (const auto& layer : layers) {
    out.layers.push_back(Layer{Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                               Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return out;
}

ModelParams init_params(const Architecture& arch, RngSeed seed) {
  if (arch.input_dim == 0 || arch.embedding_dim == 0) {
    throw validation_error("architecture dimensions must be positive");
  }
  std::vector<std::size_t> widths = {arch.input_dim};
  widths.insert(widths.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
  widths.push_back(arch.embedding_dim);

  Rng rng(seed);
  ModelParams params;
  params.l2_normalize_output = arch.l2_normalize_output;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(widths[l]);
    const auto out = static_cast<Eigen::Index>(widths[l + 1]);
    if (in == 0 || out == 0) throw validation_error("hidden widths must be positive");
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index i = 0; i < out; ++i) {
      for (Eigen::Index j = 0; j < in; ++j) layer.weights(i, j) = rng.normal(0.0, stddev);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Eigen::VectorXd forward(const ModelParams& params, std::span<const double> x) {
  check_input_dim(params, x.size());
  Eigen::MatrixXd column = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  return run_forward(params, column).embeddings.col(0);
}

Eigen::MatrixXd forward_batch(const ModelParams& params, const Eigen::MatrixXd& inputs) {
  check_input_dim(params, static_cast<std::size_t>(inputs.cols()));
  return run_forward(params, inputs.transpose()).embeddings.transpose();
}

LossAndGrads batch_loss_and_grads(const ModelParams& params, const Batch& batch,
                                  const loss::LossConfig& cfg) {
  check_input_dim(params, static_cast<std::size_t>(batch.inputs.cols()));
  const ForwardCache cache = run_forward(params, batch.inputs.transpose());
  const Eigen::MatrixXd& y = cache.embeddings;  // E x B

  const Eigen::MatrixXd sq_dist = loss::pairwise_sq_distances(y.transpose());
  auto mined = loss::mine_from_distances(sq_dist, batch.labels, cfg);

  LossAndGrads out;
  out.loss = mined.mean_loss;
  out.grads = params.zeros_like();

  // d loss / d embeddings. A triplet contributes only while its hinge is open.
  Eigen::MatrixXd grad_y = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  const double weight = 1.0 / static_cast<double>(mined.triplets.size());
  for (const auto& t : mined.triplets) {
    const double d_ap = sq_dist(t.anchor, t.positive);
    const double d_an = sq_dist(t.anchor, t.negative);
    if (d_ap - d_an + cfg.margin <= 0.0) continue;
    const Eigen::VectorXd to_pos = y.col(t.anchor) - y.col(t.positive);
    const Eigen::VectorXd to_neg = y.col(t.anchor) - y.col(t.negative);
    grad_y.col(t.anchor) += 2.0 * weight * (to_pos - to_neg);
    grad_y.col(t.positive) -= 2.0 * weight * to_pos;
    grad_y.col(t.negative) += 2.0 * weight * to_neg;
  }
  out.triplets = std::move(mined.triplets);

  Eigen::MatrixXd grad = grad_y;
  if (params.l2_normalize_output) {
    for (Eigen::Index j = 0; j < grad.cols(); ++j) {
      const double n = cache.norms(j);
      if (n > 0.0) {
        const double radial = y.col(j).dot(grad_y.col(j));
        grad.col(j) = (grad_y.col(j) - radial * y.col(j)) / n;
      }
    }
  }

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    if (l + 1 < params.layers.size()) {
      grad = grad.cwiseProduct((cache.preactivations[l].array() > 0.0).cast<double>().matrix());
    }
    out.grads.layers[l].weights = grad * cache.activations[l].transpose();
    out.grads.layers[l].bias = grad.rowwise().sum();
    if (l > 0) grad = params.layers[l].weights.transpose() * grad;
  }
  return out;
}

double batch_loss(const ModelParams& params, const Batch& batch, const loss::LossConfig& cfg) {
  const Eigen::MatrixXd emb = forward_batch(params, batch.inputs);
  return loss::mine_batch(emb, batch.labels, cfg).mean_loss;
}

AdamOptimizer::AdamOptimizer(const ModelParams& shape, AdamConfig cfg)
    : cfg_(cfg), first_moment_(shape.zeros_like()), second_moment_(shape.zeros_like()) {
  if (!(cfg_.learning_rate > 0.0)) throw validation_error("learning_rate must be positive");
  if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0)) {
    throw validation_error("Adam betas must lie in (0, 1)");
  }
  if (!(cfg_.epsilon > 0.0)) throw validation_error("Adam epsilon must be positive");
}

void AdamOptimizer::step(ModelParams& params, const ModelParams& grads) {
  ++step_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  for_each_tensor(first_moment_, grads, [&](auto m, auto g) { m = b1 * m + (1.0 - b1) * g; });
  for_each_tensor(second_moment_, grads,
                  [&](auto v, auto g) { v = b2 * v + (1.0 - b2) * g.square(); });

  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = cfg_.learning_rate;
  const double eps = cfg_.epsilon;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](auto p, auto m, auto v) {
      p -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
    };
    update(params.layers[l].weights.array(), first_moment_.layers[l].weights.array(),
           second_moment_.layers[l].weights.array());
    update(params.layers[l].bias.array(), first_moment_.layers[l].bias.array(),
           second_moment_.layers[l].bias.array());
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw validation_error("epochs must be >= 1");
  if (identities_per_batch < 2) throw validation_error("identities_per_batch must be >= 2");
  if (samples_per_identity < 2) throw validation_error("samples_per_identity must be >= 2");
  if (!(loss.margin >= 0.0)) throw validation_error("margin must be >= 0");
  if (embedding_dim == 0) throw validation_error("embedding_dim must be positive");
  if (vector_augment) {
    if (!(vector_augment->noise_sigma >= 0.0)) {
      throw validation_error("noise_sigma must be >= 0");
    }
    if (!(vector_augment->dropout_prob >= 0.0 && vector_augment->dropout_prob < 1.0)) {
      throw validation_error("dropout_prob must lie in [0, 1)");
    }
  }
}

TrainResult train(const core::Dataset& train_set, const TrainConfig& cfg,
                  std::span<const std::string> holdout_ids) {
  cfg.validate();
  if (train_set.empty()) throw validation_error("training set is empty");

  // Classes in label-string order so batch composition does not depend on
  // row order quirks beyond the seed.
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    members[train_set[i].label.to_string()].push_back(i);
  }
  if (members.size() < 2) throw validation_error("training set needs at least two classes");
  const auto per_identity = static_cast<std::size_t>(cfg.samples_per_identity);
  for (const auto& [name, idx] : members) {
    if (idx.size() < per_identity) {
      throw validation_error("class '" + name + "' has " + std::to_string(idx.size()) +
                             " samples, fewer than samples_per_identity=" +
                             std::to_string(per_identity));
    }
  }
  const std::unordered_set<std::string> holdout(holdout_ids.begin(), holdout_ids.end());

  std::vector<std::vector<std::size_t>> class_members;
  for (auto& [name, idx] : members) class_members.push_back(std::move(idx));
  const std::size_t n_classes = class_members.size();

  Architecture arch;
  arch.input_dim = train_set.dim();
  arch.hidden_dims = cfg.hidden_dims;
  arch.embedding_dim = cfg.embedding_dim;
  arch.l2_normalize_output = cfg.l2_normalize_output;

  TrainResult result;
  result.params = init_params(arch, derive_seed(cfg.seed, "init"));
  AdamOptimizer optimizer(result.params, cfg.adam);
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  Rng augment_rng(derive_seed(cfg.seed, "augment"));

  const auto dim = static_cast<Eigen::Index>(train_set.dim());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> groups_left(n_classes);
    std::vector<std::size_t> cursor(n_classes, 0);
    for (std::size_t c = 0; c < n_classes; ++c) {
      auto order = class_members[c];
      batch_rng.shuffle(order);
      order.resize(order.size() - order.size() % per_identity);
      groups_left[c] = std::move(order);
    }

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    while (true) {
      std::vector<std::size_t> available;
      for (std::size_t c = 0; c < n_classes; ++c) {
        if (cursor[c] < groups_left[c].size()) available.push_back(c);
      }
      if (available.size() < 2) break;

      const std::size_t take =
          std::min(available.size(), static_cast<std::size_t>(cfg.identities_per_batch));
      const auto picks = batch_rng.sample_without_replacement(available.size(), take);

      Batch batch;
      batch.inputs.resize(static_cast<Eigen::Index>(take * per_identity), dim);
      Eigen::Index row = 0;
      for (std::size_t pick : picks) {
        const std::size_t c = available[pick];
        for (std::size_t s = 0; s < per_identity; ++s) {
          const auto& sample = train_set[groups_left[c][cursor[c] + s]];
          if (!holdout.empty() && holdout.count(sample.id)) {
            throw validation_error("held-out sample '" + sample.id + "' reached a training batch");
          }
          for (Eigen::Index k = 0; k < dim; ++k) {
            double v = sample.vector[static_cast<std::size_t>(k)];
            if (cfg.vector_augment) {
              const auto& aug = *cfg.vector_augment;
              if (aug.noise_sigma > 0.0) v += aug.noise_sigma * augment_rng.normal();
              if (aug.dropout_prob > 0.0) {
                v = augment_rng.uniform01() < aug.dropout_prob ? 0.0 : v / (1.0 - aug.dropout_prob);
              }
            }
            batch.inputs(row, k) = v;
          }
          batch.labels.push_back(static_cast<int>(c));
          ++row;
        }
        cursor[c] += per_identity;
      }

      auto step = batch_loss_and_grads(result.params, batch, cfg.loss);
      optimizer.step(result.params, step.grads);
      loss_sum += step.loss;
      ++n_batches;
    }
    if (n_batches == 0) throw validation_error("no batch could be formed from the training set");
    result.history.push_back(loss_sum / static_cast<double>(n_batches));
  }
  result.params.validate();
  return result;
}

json to_json(const ModelParams& params) {
  json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["l2_normalize_output"] = params.l2_normalize_output;
  doc["layers"] = json::array();
  for (const auto& layer : params.layers) {
    json entry;
    entry["rows"] = layer.weights.rows();
    entry["cols"] = layer.weights.cols();
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weights.size()));
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) w.push_back(layer.weights(i, j));
    }
    entry["weights"] = std::move(w);
    entry["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
    doc["layers"].push_back(std::move(entry));
  }
  return doc;
}

ModelParams params_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw validation_error("not a model checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw validation_error("unsupported checkpoint version " + doc.at("version").dump());
    }
    ModelParams params;
    params.l2_normalize_output = doc.at("l2_normalize_output").get<bool>();
    for (const auto& entry : doc.at("layers")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const auto w = entry.at("weights").get<std::vector<double>>();
      const auto b = entry.at("bias").get<std::vector<double>>();
      if (rows <= 0 || cols <= 0 || w.size() != static_cast<std::size_t>(rows * cols) ||
          b.size() != static_cast<std::size_t>(rows)) {
        throw validation_error("checkpoint layer shape does not match its data");
      }
      Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) layer.weights(i, j) = w[i * cols + j];
        layer.bias(i) = b[static_cast<std::size_t>(i)];
      }
      params.layers.push_back(std::move(layer));
    }
    params.validate();
    return params;
  } catch (const json::exception& e) {
    throw validation_error(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint '" + path.string() + "'");
  out << to_json(params).dump(1) << '\n';
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw parse_error("checkpoint '" + path.string() + "': " + e.what());
  }
  return params_from_json(doc);
}

}  // namespace smad::model
