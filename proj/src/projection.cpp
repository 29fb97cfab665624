#include "smad/projection.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "smad/core.hpp"
#include "smad/error.hpp"

namespace smad::projection {

namespace {

constexpr double kEntropyTolerance = 1e-5;
constexpr int kMaxBisectionSteps = 50;
constexpr double kInitialStddev = 1e-4;
constexpr double kMinGain = 0.01;

// Fills row i of `conditional` for precision beta and returns the entropy.
// Distances are shifted by their minimum so the largest weight is exp(0).
double row_entropy(const Eigen::MatrixXd& sq_dist, Eigen::Index i, double beta, double min_dist,
                   Eigen::MatrixXd& conditional) {
  const Eigen::Index n = sq_dist.rows();
  double sum_p = 0.0;
  double sum_dp = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) {
      conditional(i, j) = 0.0;
      continue;
    }
    const double shifted = sq_dist(i, j) - min_dist;
    const double p = std::exp(-shifted * beta);
    conditional(i, j) = p;
    sum_p += p;
    sum_dp += shifted * p;
  }
  conditional.row(i) /= sum_p;
  return std::log(sum_p) + beta * sum_dp / sum_p;
}

void check_feasible(Eigen::Index n, double perplexity) {
  if (n < 5) throw numeric_error("t-SNE needs at least 5 points, got " + std::to_string(n));
  if (!(perplexity > 0.0)) throw numeric_error("perplexity must be positive");
  if (!(perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw numeric_error("perplexity " + core::format_double(perplexity) +
                        " is infeasible for " + std::to_string(n) +
                        " points (must be below (n - 1) / 3)");
  }
}

}  // namespace

Affinities compute_affinities(const Eigen::MatrixXd& points, double perplexity) {
  const Eigen::Index n = points.rows();
  check_feasible(n, perplexity);

  Eigen::MatrixXd sq_dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sq_dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (points.row(i) - points.row(j)).squaredNorm();
      sq_dist(i, j) = d;
      sq_dist(j, i) = d;
    }
  }

  Affinities out;
  out.conditional = Eigen::MatrixXd::Zero(n, n);
  out.betas.resize(static_cast<std::size_t>(n));
  out.entropies.resize(static_cast<std::size_t>(n));
  const double target = std::log(perplexity);

  for (Eigen::Index i = 0; i < n; ++i) {
    double min_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) min_dist = std::min(min_dist, sq_dist(i, j));
    }
    double beta = 1.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double entropy = row_entropy(sq_dist, i, beta, min_dist, out.conditional);
    for (int step = 0; step < kMaxBisectionSteps && std::abs(entropy - target) > kEntropyTolerance;
         ++step) {
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
      }
      entropy = row_entropy(sq_dist, i, beta, min_dist, out.conditional);
    }
    out.betas[static_cast<std::size_t>(i)] = beta;
    out.entropies[static_cast<std::size_t>(i)] = entropy;
  }

  out.joint = (out.conditional + out.conditional.transpose()) / (2.0 * static_cast<double>(n));
  return out;
}

double kl_divergence(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& layout) {
  const Eigen::Index n = layout.rows();
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(n, n);
  double sum_num = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (layout.row(i) - layout.row(j)).squaredNorm());
      num(i, j) = v;
      num(j, i) = v;
      sum_num += 2.0 * v;
    }
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = joint(i, j);
      if (i != j && p > 0.0) kl += p * std::log(p / (num(i, j) / sum_num));
    }
  }
  return kl;
}

TsneResult tsne_project(const Eigen::MatrixXd& points, const TsneConfig& cfg) {
  if (cfg.iterations < 1) throw validation_error("t-SNE iterations must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw validation_error("t-SNE learning rate must be positive");
  const Eigen::Index n = points.rows();
  const Affinities aff = compute_affinities(points, cfg.perplexity);
  const Eigen::MatrixXd& p = aff.joint;

  Rng rng(cfg.seed);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = kInitialStddev * rng.normal();
    y(i, 1) = kInitialStddev * rng.normal();
  }
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);

  TsneResult result;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum =
        iter < cfg.momentum_switch_iteration ? cfg.initial_momentum : cfg.final_momentum;

    double sum_num = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0);
        const double dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        sum_num += 2.0 * v;
      }
    }

    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = num(i, j);
        const double coeff = 4.0 * (exaggeration * p(i, j) - v / sum_num) * v;
        const double dx = coeff * (y(i, 0) - y(j, 0));
        const double dy = coeff * (y(i, 1) - y(j, 1));
        grad(i, 0) += dx;
        grad(i, 1) += dy;
        grad(j, 0) -= dx;
        grad(j, 1) -= dy;
      }
    }

    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0.0) == (velocity(i, k) > 0.0);
        gains(i, k) = std::max(same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2, kMinGain);
        velocity(i, k) = momentum * velocity(i, k) - cfg.learning_rate * gains(i, k) * grad(i, k);
        y(i, k) += velocity(i, k);
      }
    }
    y.rowwise() -= y.colwise().mean();

    if (iter == 0) result.kl_after_first_iteration = kl_divergence(p, y);
  }
  result.kl_final = kl_divergence(p, y);
  result.layout = std::move(y);
  return result;
}

void write_projection_csv(std::ostream& out, const Eigen::MatrixXd& layout,
                          std::span<const PointMeta> meta) {
  if (static_cast<std::size_t>(layout.rows()) != meta.size() || layout.cols() != 2) {
    throw validation_error("projection has " + std::to_string(layout.rows()) + " points but " +
                           std::to_string(meta.size()) + " metadata rows");
  }
  out << "id,label,domain,x,y\n";
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << meta[i].id << ',' << meta[i].label << ',' << meta[i].domain << ','
        << core::format_double(layout(r, 0)) << ',' << core::format_double(layout(r, 1)) << '\n';
  }
}

void export_projection(const std::filesystem::path& path, const Eigen::MatrixXd& layout,
                       std::span<const PointMeta> meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write projection '" + path.string() + "'");
  write_projection_csv(out, layout, meta);
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

}  // namespace smad::projection
