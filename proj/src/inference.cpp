#include "smad/inference.hpp"

#include <ostream>

#include "smad/error.hpp"

namespace smad::inference {

TemplateSet::TemplateSet(std::vector<core::LabeledEmbedding> templates)
    : templates_(std::move(templates)) {
  if (templates_.empty()) throw validation_error("template set is empty");
  for (const auto& t : templates_) {
    if (!t.label.is_bona_fide()) {
      throw validation_error("template '" + t.id + "' is not bona fide");
    }
  }
}

TemplateSet select_templates(const core::Dataset& pool, int n, RngSeed seed) {
  if (n < 1) throw validation_error("number of templates must be >= 1");
  const core::Dataset bona = pool.bona_fide_only();
  if (static_cast<std::size_t>(n) > bona.size()) {
    throw numeric_error("requested " + std::to_string(n) + " templates but only " +
                        std::to_string(bona.size()) + " bona fide samples are available");
  }
  Rng rng(seed);
  std::vector<core::LabeledEmbedding> chosen;
  for (std::size_t i : rng.sample_without_replacement(bona.size(), static_cast<std::size_t>(n))) {
    chosen.push_back(bona[i]);
  }
  return TemplateSet(std::move(chosen));
}

TemplateScorer::TemplateScorer(const model::ModelParams& params, const TemplateSet& templates)
    : params_(&params) {
  const auto& list = templates.templates();
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(list.size()),
                         static_cast<Eigen::Index>(params.input_dim()));
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i].vector.size() != params.input_dim()) {
      throw validation_error("template '" + list[i].id + "' has dimension " +
                             std::to_string(list[i].vector.size()) + ", model expects " +
                             std::to_string(params.input_dim()));
    }
    inputs.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(list[i].vector.data(), list[i].vector.size());
  }
  template_embeddings_ = model::forward_batch(params, inputs);
}

double TemplateScorer::score_embedded(const Eigen::VectorXd& probe_embedding) const {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < template_embeddings_.rows(); ++i) {
    sum += (template_embeddings_.row(i).transpose() - probe_embedding).squaredNorm();
  }
  return sum / static_cast<double>(template_embeddings_.rows());
}

double TemplateScorer::score(std::span<const double> probe) const {
  Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(probe.data(), probe.size());
  return score_embedded(model::forward_batch(*params_, row).row(0).transpose());
}

double score(const model::ModelParams& params, std::span<const double> probe,
             const TemplateSet& templates) {
  return TemplateScorer(params, templates).score(probe);
}

int decide(double phi_avg, double th) { return phi_avg < th ? 1 : 0; }

ScoredDataset score_dataset(const model::ModelParams& params, const core::Dataset& test,
                            const TemplateSet& templates) {
  if (test.empty()) throw validation_error("test set is empty");
  if (test.dim() != params.input_dim()) {
    throw validation_error("test set dimension " + std::to_string(test.dim()) +
                           " does not match model input dimension " +
                           std::to_string(params.input_dim()));
  }
  const TemplateScorer scorer(params, templates);

  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(test.size()),
                         static_cast<Eigen::Index>(test.dim()));
  for (std::size_t i = 0; i < test.size(); ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(test[i].vector.data(), test[i].vector.size());
  }
  const Eigen::MatrixXd embedded = model::forward_batch(params, inputs);

  ScoredDataset out;
  out.probes.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& e = test[i];
    const double s = scorer.score_embedded(embedded.row(static_cast<Eigen::Index>(i)).transpose());
    if (e.label.is_bona_fide()) {
      out.scores.bonafide_scores.push_back(s);
    } else {
      out.scores.attack_scores[e.label.tool()].push_back(s);
    }
    out.probes.push_back(ScoredProbe{e.id, e.label, s});
  }
  return out;
}

void write_scores_csv(std::ostream& out, const ScoredDataset& scored, double threshold) {
  out << "id,label,score,decision\n";
  for (const auto& p : scored.probes) {
    out << p.id << ',' << p.label.to_string() << ',' << core::format_double(p.score) << ','
        << decide(p.score, threshold) << '\n';
  }
}

std::vector<GridRow> template_grid_search(const model::ModelParams& params,
                                          const core::Dataset& train_bonafide,
                                          const core::Dataset& validation,
                                          std::span<const int> grid, RngSeed seed,
                                          metrics::Pooling pooling) {
  if (grid.empty()) throw validation_error("template grid is empty");
  std::vector<GridRow> rows;
  for (int n : grid) {
    const TemplateSet templates = select_templates(train_bonafide, n, seed);
    const auto scored = score_dataset(params, validation, templates);
    const auto report = metrics::det_and_operating_points(scored.scores, pooling);
    rows.push_back(GridRow{n, report.d_eer, report.bpcer10, false});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& b = rows[best];
    if (r.d_eer < b.d_eer || (r.d_eer == b.d_eer && r.n_templates < b.n_templates)) best = i;
  }
  rows[best].is_best = true;
  return rows;
}

void write_grid_csv(std::ostream& out, std::span<const GridRow> rows) {
  out << "n_templates,d_eer,bpcer10,is_best\n";
  for (const auto& r : rows) {
    out << r.n_templates << ',' << core::format_double(r.d_eer) << ','
        << core::format_double(r.bpcer10) << ',' << (r.is_best ? 1 : 0) << '\n';
  }
}

}  // namespace smad::inference
