#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "smad/core.hpp"
#include "smad/loss.hpp"
#include "smad/random.hpp"

namespace smad::model {

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

/// Weights of the embedding head: affine layers with ReLU between them and
/// identity on the last, optionally followed by L2 normalization.
struct ModelParams {
  std::vector<Layer> layers;
  bool l2_normalize_output = true;

  std::size_t input_dim() const;
  std::size_t embedding_dim() const;
  std::size_t parameter_count() const;

  /// Checks that layer shapes compose and every parameter is finite.
  void validate() const;

  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
};

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims = {128};
  std::size_t embedding_dim = 64;
  bool l2_normalize_output = true;
};

/// He-normal weights, zero biases.
ModelParams init_params(const Architecture& arch, RngSeed seed);

/// Embedding of one input vector.
Eigen::VectorXd forward(const ModelParams& params, std::span<const double> x);

/// Embeddings of the rows of `inputs` (one row per sample).
Eigen::MatrixXd forward_batch(const ModelParams& params, const Eigen::MatrixXd& inputs);

struct Batch {
  Eigen::MatrixXd inputs;  // B x D
  std::vector<int> labels;
};

struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
  std::vector<loss::Triplet> triplets;
};

/// Mined triplet loss on the batch embeddings and its exact gradient with the
/// mined selection held fixed.
LossAndGrads batch_loss_and_grads(const ModelParams& params, const Batch& batch,
                                  const loss::LossConfig& cfg);

/// The loss alone (re-mines on every call). Used for finite-difference checks.
double batch_loss(const ModelParams& params, const Batch& batch, const loss::LossConfig& cfg);

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams& shape, AdamConfig cfg);

  void step(ModelParams& params, const ModelParams& grads);
  long steps_taken() const { return step_; }

 private:
  AdamConfig cfg_;
  ModelParams first_moment_;
  ModelParams second_moment_;
  long step_ = 0;
};

struct VectorAugment {
  double noise_sigma = 0.0;
  double dropout_prob = 0.0;  // in [0, 1)
};

struct TrainConfig {
  int epochs = 20;
  int identities_per_batch = 8;
  int samples_per_identity = 4;
  loss::LossConfig loss;
  AdamConfig adam;
  std::vector<std::size_t> hidden_dims = {128};
  std::size_t embedding_dim = 64;
  bool l2_normalize_output = true;
  std::optional<VectorAugment> vector_augment;
  RngSeed seed{};

  int batch_size() const { return identities_per_batch * samples_per_identity; }
  void validate() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> history;  // mean batch loss per epoch
};

/// Trains a fresh head on `train_set`.
///
/// Per epoch each class's members are shuffled and cut into groups of
/// samples_per_identity; each batch takes one unused group from each of
/// identities_per_batch classes (fewer when fewer classes remain), so no
/// sample repeats within an epoch. The epoch ends when fewer than two classes
/// have groups left.
///
/// `holdout_ids` are ids that must never enter a batch (the evaluation set);
/// a violation raises a validation error.
TrainResult train(const core::Dataset& train_set, const TrainConfig& cfg,
                  std::span<const std::string> holdout_ids = {});

nlohmann::json to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& doc);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace smad::model
