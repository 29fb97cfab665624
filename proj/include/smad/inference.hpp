#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "smad/core.hpp"
#include "smad/metrics.hpp"
#include "smad/model.hpp"

namespace smad::inference {

/// Bona fide reference samples drawn from the training domain.
class TemplateSet {
 public:
  /// Throws when empty or when a member is not bona fide.
  explicit TemplateSet(std::vector<core::LabeledEmbedding> templates);

  std::size_t size() const { return templates_.size(); }
  const std::vector<core::LabeledEmbedding>& templates() const { return templates_; }

 private:
  std::vector<core::LabeledEmbedding> templates_;
};

struct InferenceConfig {
  /// Decision threshold. When unset, callers use the D-EER threshold.
  std::optional<double> threshold;
  RngSeed template_seed{};
  int n_templates = 4;
};

/// n distinct bona fide members of `pool`, uniform without replacement.
/// Throws a numeric error when the pool has fewer than n bona fide samples.
TemplateSet select_templates(const core::Dataset& pool, int n, RngSeed seed);

/// Template embeddings computed once and reused for every probe.
class TemplateScorer {
 public:
  TemplateScorer(const model::ModelParams& params, const TemplateSet& templates);

  /// Mean squared embedding distance from the probe to each template, summed
  /// in template order.
  double score(std::span<const double> probe) const;
  /// Same for a probe already embedded.
  double score_embedded(const Eigen::VectorXd& probe_embedding) const;

 private:
  const model::ModelParams* params_;
  Eigen::MatrixXd template_embeddings_;  // N x E
};

/// phi_avg for one probe.
double score(const model::ModelParams& params, std::span<const double> probe,
             const TemplateSet& templates);

/// 1 (bona fide) iff phi_avg < th, else 0 (attack).
int decide(double phi_avg, double th);

struct ScoredProbe {
  std::string id;
  core::ClassLabel label = core::ClassLabel::bona_fide();
  double score = 0.0;
};

struct ScoredDataset {
  metrics::ScoreSet scores;
  std::vector<ScoredProbe> probes;  // test-set order
};

/// Scores every sample and routes it by label.
ScoredDataset score_dataset(const model::ModelParams& params, const core::Dataset& test,
                            const TemplateSet& templates);

/// CSV `id,label,score,decision`.
void write_scores_csv(std::ostream& out, const ScoredDataset& scored, double threshold);

struct GridRow {
  int n_templates = 0;
  double d_eer = 0.0;
  double bpcer10 = 0.0;
  bool is_best = false;
};

/// One row per grid entry, in grid order; the row with the lowest D-EER
/// (smaller n on ties) is flagged. Template draws for different n share the
/// seed, so smaller sets are prefixes of larger ones.
std::vector<GridRow> template_grid_search(const model::ModelParams& params,
                                          const core::Dataset& train_bonafide,
                                          const core::Dataset& validation,
                                          std::span<const int> grid, RngSeed seed,
                                          metrics::Pooling pooling = metrics::Pooling::Pooled);

/// CSV `n_templates,d_eer,bpcer10,is_best`.
void write_grid_csv(std::ostream& out, std::span<const GridRow> rows);

}  // namespace smad::inference
