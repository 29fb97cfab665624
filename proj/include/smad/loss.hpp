#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smad/core.hpp"

namespace smad::loss {

enum class MiningMode { SemiHard, Hard, AllValid };

std::string to_string(MiningMode mode);
/// Accepts `semihard`, `hard`, `allvalid` (case-sensitive).
MiningMode parse_mining_mode(const std::string& text);

struct LossConfig {
  double margin = 0.2;
  MiningMode mining_mode = MiningMode::SemiHard;
};

/// 0 for a same-class pair, 1 for a different-class pair.
enum class PairLabel : int { SameClass = 0, DifferentClass = 1 };

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class TripletKind { Easy, Hard, SemiHard };

/// Squared Euclidean distance. Throws on dimension mismatch.
double pair_distance(std::span<const double> a, std::span<const double> b);

/// (1 - y) d^2 + y max(0, m - d)^2 for a caller-supplied distance d >= 0.
double contrastive_loss(double d, PairLabel y, const LossConfig& cfg);

/// max(d_ap - d_an + margin, 0).
double triplet_loss(double d_ap, double d_an, double margin);

/// Hard when the negative is closer than the positive; Easy when the hinge is
/// inactive (d_an >= d_ap + margin); SemiHard in between. On the boundaries
/// d_an == d_ap (with margin > 0) is SemiHard and d_an == d_ap + margin is Easy.
TripletKind classify_triplet(double d_ap, double d_an, double margin);

struct MiningResult {
  std::vector<Triplet> triplets;
  double mean_loss = 0.0;
};

/// Pairwise squared distances between the rows of `embeddings`.
Eigen::MatrixXd pairwise_sq_distances(const Eigen::MatrixXd& embeddings);

/// Batch-online triplet mining over the rows of `embeddings`. `labels` holds
/// one integer class key per row; only equality between keys matters.
///
/// Every ordered (anchor, positive) pair with anchor != positive and equal
/// labels is visited in row-major order.
///   SemiHard: the negative with the smallest d_an among those with
///             d_an > d_ap; if none, the negative with the largest d_an.
///   Hard:     the negative with the smallest d_an.
///   AllValid: every negative, in index order.
/// Ties go to the lowest negative index. mean_loss averages triplet_loss over
/// the selected triplets.
///
/// Throws a validation error when B < 3, when labels and rows disagree in
/// count, when the batch has a single class, or when no positive pair exists.
MiningResult mine_batch(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                        const LossConfig& cfg);

/// Same, keyed by class label.
MiningResult mine_batch(const Eigen::MatrixXd& embeddings,
                        std::span<const core::ClassLabel> labels, const LossConfig& cfg);

/// Same, on a precomputed squared-distance matrix.
MiningResult mine_from_distances(const Eigen::MatrixXd& sq_dist, std::span<const int> labels,
                                 const LossConfig& cfg);

/// Number of valid triplets for class sizes n_c in a batch of B: the sum over
/// classes of n_c (n_c - 1) (B - n_c).
std::size_t count_valid_triplets(std::span<const int> labels);

}  // namespace smad::loss
