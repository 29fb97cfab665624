#include "smad/loss.hpp"

#include <algorithm>
#include <map>

#include "smad/error.hpp"

namespace smad::loss {

std::string to_string(MiningMode mode) {
  switch (mode) {
    case MiningMode::SemiHard:
      return "semihard";
    case MiningMode::Hard:
      return "hard";
    case MiningMode::AllValid:
      return "allvalid";
  }
  return "semihard";
}

MiningMode parse_mining_mode(const std::string& text) {
  if (text == "semihard") return MiningMode::SemiHard;
  if (text == "hard") return MiningMode::Hard;
  if (text == "allvalid") return MiningMode::AllValid;
  throw validation_error("unknown mining mode '" + text + "' (semihard, hard, allvalid)");
}

double pair_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw validation_error("pair_distance: dimension mismatch (" + std::to_string(a.size()) +
                           " vs " + std::to_string(b.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    sum += diff * diff;
  }
  return sum;
}

double contrastive_loss(double d, PairLabel y, const LossConfig& cfg) {
  const double yg = static_cast<int>(y);
  const double hinge = std::max(0.0, cfg.margin - d);
  return (1.0 - yg) * d * d + yg * hinge * hinge;
}

double triplet_loss(double d_ap, double d_an, double margin) {
  return std::max(d_ap - d_an + margin, 0.0);
}

TripletKind classify_triplet(double d_ap, double d_an, double margin) {
  if (d_an < d_ap) return TripletKind::Hard;
  if (d_ap + margin <= d_an) return TripletKind::Easy;
  return TripletKind::SemiHard;
}

Eigen::MatrixXd pairwise_sq_distances(const Eigen::MatrixXd& embeddings) {
  const Eigen::Index n = embeddings.rows();
  Eigen::MatrixXd d(n, n);
  // Explicit differences rather than the Gram expansion: exact zeros on the
  // diagonal and no cancellation for nearby points.
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (embeddings.row(i) - embeddings.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::size_t count_valid_triplets(std::span<const int> labels) {
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  const std::size_t b = labels.size();
  std::size_t total = 0;
  for (const auto& [label, n] : sizes) total += n * (n - 1) * (b - n);
  return total;
}

MiningResult mine_from_distances(const Eigen::MatrixXd& sq_dist, std::span<const int> labels,
                                 const LossConfig& cfg) {
  const std::size_t b = labels.size();
  if (static_cast<std::size_t>(sq_dist.rows()) != b || sq_dist.rows() != sq_dist.cols()) {
    throw validation_error("mine_batch: label count does not match batch size");
  }
  if (b < 3) throw validation_error("mine_batch: batch needs at least 3 samples");
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
    throw validation_error("mine_batch: batch needs at least two distinct labels");
  }

  MiningResult result;
  double loss_sum = 0.0;
  bool any_positive_pair = false;

  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      any_positive_pair = true;
      const double d_ap = sq_dist(a, p);

      auto emit = [&](std::size_t n) {
        result.triplets.push_back(Triplet{a, p, n});
        loss_sum += triplet_loss(d_ap, sq_dist(a, n), cfg.margin);
      };

      if (cfg.mining_mode == MiningMode::AllValid) {
        for (std::size_t n = 0; n < b; ++n) {
          if (labels[n] != labels[a]) emit(n);
        }
        continue;
      }

      std::size_t closest = b;        // smallest d_an overall
      std::size_t closest_above = b;  // smallest d_an with d_an > d_ap
      std::size_t farthest = b;       // largest d_an
      for (std::size_t n = 0; n < b; ++n) {
        if (labels[n] == labels[a]) continue;
        const double d_an = sq_dist(a, n);
        if (closest == b || d_an < sq_dist(a, closest)) closest = n;
        if (farthest == b || d_an > sq_dist(a, farthest)) farthest = n;
        if (d_an > d_ap && (closest_above == b || d_an < sq_dist(a, closest_above))) {
          closest_above = n;
        }
      }
      if (cfg.mining_mode == MiningMode::Hard) {
        emit(closest);
      } else {
        emit(closest_above != b ? closest_above : farthest);
      }
    }
  }
  if (!any_positive_pair) throw validation_error("batch has no positive pairs");

  result.mean_loss = loss_sum / static_cast<double>(result.triplets.size());
  return result;
}

MiningResult mine_batch(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                        const LossConfig& cfg) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw validation_error("mine_batch: label count does not match batch size");
  }
  return mine_from_distances(pairwise_sq_distances(embeddings), labels, cfg);
}

MiningResult mine_batch(const Eigen::MatrixXd& embeddings,
                        std::span<const core::ClassLabel> labels, const LossConfig& cfg) {
  std::vector<int> keys;
  keys.reserve(labels.size());
  std::vector<core::ClassLabel> seen;
  for (const auto& label : labels) {
    auto it = std::find(seen.begin(), seen.end(), label);
    if (it == seen.end()) {
      keys.push_back(static_cast<int>(seen.size()));
      seen.push_back(label);
    } else {
      keys.push_back(static_cast<int>(it - seen.begin()));
    }
  }
  return mine_batch(embeddings, keys, cfg);
}

}  // namespace smad::loss
