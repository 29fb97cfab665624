#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace smad::metrics {

/// Detection scores split by population. Scores are distances: lower means
/// more bona-fide-like, and a sample is classified as an attack when
/// score >= threshold.
struct ScoreSet {
  std::vector<double> bonafide_scores;
  std::map<std::string, std::vector<double>> attack_scores;  // by tool name

  std::vector<double> pooled_attacks() const;
  /// Throws a validation error on a non-finite score.
  void validate() const;
};

enum class Pooling { Pooled, WorstCase };

std::string to_string(Pooling pooling);
Pooling parse_pooling(const std::string& text);

/// Percentage of attacks classified as bona fide (score < th).
double apcer(std::span<const double> attack_scores, double th);
/// Percentage of bona fide samples classified as attacks (score >= th).
double bpcer(std::span<const double> bonafide_scores, double th);

struct WorstCase {
  std::string tool;
  double apcer = 0.0;
};

/// Highest per-tool APCER at `th`; ties go to the lexicographically first tool.
WorstCase worst_case_apcer(const ScoreSet& scores, double th);

struct DetPoint {
  double threshold;
  double apcer;
  double bpcer;
};

struct Confusion {
  std::size_t bonafide_as_bonafide = 0;
  std::size_t bonafide_as_attack = 0;
  std::size_t attack_as_bonafide = 0;
  std::size_t attack_as_attack = 0;
};

struct EvalReport {
  Pooling pooling = Pooling::Pooled;
  double d_eer = 0.0;
  double eer_threshold = 0.0;
  double bpcer10 = 0.0;
  double bpcer20 = 0.0;
  std::vector<DetPoint> det_points;
  std::map<std::string, double> per_tool_apcer_at_eer;
  Confusion confusion;  // at eer_threshold, attacks pooled
  std::size_t n_bonafide = 0;
  std::size_t n_attack = 0;
};

/// Sweeps every distinct observed score plus +infinity as threshold.
///
/// D-EER: the rate where APCER and BPCER meet. Along the sweep APCER - BPCER
/// rises from negative to positive; at the first threshold where it is
/// non-negative, an exact zero gives the rate directly, otherwise the rates
/// are interpolated linearly between that threshold and the previous one to
/// the crossing. eer_threshold is whichever swept threshold has the smaller
/// |APCER - BPCER| (lower on ties).
///
/// BPCER10 / BPCER20: smallest BPCER over thresholds with APCER <= 10% / 5%.
/// Under WorstCase pooling APCER at each threshold is the maximum over tools.
EvalReport det_and_operating_points(const ScoreSet& scores, Pooling pooling = Pooling::Pooled);

nlohmann::json to_json(const EvalReport& report);
/// CSV `threshold,apcer,bpcer`, one row per swept threshold.
void write_det_csv(std::ostream& out, const EvalReport& report);

}  // namespace smad::metrics
