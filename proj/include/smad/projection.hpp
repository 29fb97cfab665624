#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smad/random.hpp"

namespace smad::projection {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iteration = 250;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  RngSeed seed{};
};

/// Row-stochastic conditional affinities and their symmetrization.
struct Affinities {
  Eigen::MatrixXd conditional;  // row i: p_{j|i}, zero diagonal, rows sum to 1
  Eigen::MatrixXd joint;        // (P + P^T) / 2n
  std::vector<double> betas;    // per-row Gaussian precision 1 / (2 sigma^2)
  std::vector<double> entropies;  // nats
};

/// Per-row bisection on the Gaussian precision until the row entropy is within
/// 1e-5 nats of log(perplexity), at most 50 steps.
Affinities compute_affinities(const Eigen::MatrixXd& points, double perplexity);

/// KL(P || Q) for a 2D layout, with Student-t Q.
double kl_divergence(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& layout);

struct TsneResult {
  Eigen::MatrixXd layout;           // n x 2
  double kl_after_first_iteration;  // un-exaggerated P
  double kl_final;
};

/// Exact O(n^2) t-SNE. Throws a numeric error when n < 5 or when
/// perplexity >= (n - 1) / 3.
TsneResult tsne_project(const Eigen::MatrixXd& points, const TsneConfig& cfg);

struct PointMeta {
  std::string id;
  std::string label;
  std::string domain;
};

/// CSV `id,label,domain,x,y`. Throws a validation error on length mismatch.
void write_projection_csv(std::ostream& out, const Eigen::MatrixXd& layout,
                          std::span<const PointMeta> meta);
void export_projection(const std::filesystem::path& path, const Eigen::MatrixXd& layout,
                       std::span<const PointMeta> meta);

}  // namespace smad::projection
