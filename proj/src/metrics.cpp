#include "smad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "smad/core.hpp"
#include "smad/error.hpp"

namespace smad::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_non_empty(std::span<const double> scores, const char* what) {
  if (scores.empty()) throw validation_error(std::string(what) + ": empty score list");
}

// Number of sorted scores strictly below th.
std::size_t count_below(const std::vector<double>& sorted, double th) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), th) -
                                  sorted.begin());
}

double percent(std::size_t count, std::size_t total) {
  return 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

std::vector<double> sorted_copy(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json threshold_json(double th) {
  if (std::isfinite(th)) return th;
  return th > 0 ? "inf" : "-inf";
}

}  // namespace

std::vector<double> ScoreSet::pooled_attacks() const {
  std::vector<double> out;
  for (const auto& [tool, s] : attack_scores) out.insert(out.end(), s.begin(), s.end());
  return out;
}

void ScoreSet::validate() const {
  auto check = [](const std::vector<double>& v, const std::string& who) {
    for (double s : v) {
      if (!std::isfinite(s)) throw validation_error("non-finite score in " + who);
    }
  };
  check(bonafide_scores, "bona fide scores");
  for (const auto& [tool, s] : attack_scores) check(s, "attack scores for '" + tool + "'");
}

std::string to_string(Pooling pooling) {
  return pooling == Pooling::Pooled ? "pooled" : "worst_case";
}

Pooling parse_pooling(const std::string& text) {
  if (text == "pooled") return Pooling::Pooled;
  if (text == "worst_case") return Pooling::WorstCase;
  throw validation_error("unknown pooling '" + text + "' (pooled, worst_case)");
}

double apcer(std::span<const double> attack_scores, double th) {
  require_non_empty(attack_scores, "apcer");
  std::size_t accepted = 0;
  for (double s : attack_scores) accepted += s < th ? 1 : 0;
  return 100.0 * static_cast<double>(accepted) / static_cast<double>(attack_scores.size());
}

double bpcer(std::span<const double> bonafide_scores, double th) {
  require_non_empty(bonafide_scores, "bpcer");
  std::size_t rejected = 0;
  for (double s : bonafide_scores) rejected += s >= th ? 1 : 0;
  return percent(rejected, bonafide_scores.size());
}

WorstCase worst_case_apcer(const ScoreSet& scores, double th) {
  if (scores.attack_scores.empty()) throw validation_error("worst_case_apcer: no attack species");
  WorstCase worst;
  bool first = true;
  for (const auto& [tool, s] : scores.attack_scores) {
    const double rate = apcer(s, th);
    if (first || rate > worst.apcer) {
      worst = WorstCase{tool, rate};
      first = false;
    }
  }
  return worst;
}

EvalReport det_and_operating_points(const ScoreSet& scores, Pooling pooling) {
  scores.validate();
  const auto attacks = scores.pooled_attacks();
  if (scores.bonafide_scores.empty()) throw validation_error("no bona fide scores");
  if (attacks.empty()) throw validation_error("no attack scores");

  const auto bona = sorted_copy(scores.bonafide_scores);
  const auto pooled = sorted_copy(attacks);
  std::vector<std::vector<double>> per_tool;
  for (const auto& [tool, s] : scores.attack_scores) {
    if (!s.empty()) per_tool.push_back(sorted_copy(s));
  }

  std::vector<double> thresholds = bona;
  thresholds.insert(thresholds.end(), pooled.begin(), pooled.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(kInf);

  // Rates from counts, so they are exact functions of the ranks.
  auto apcer_at = [&](double th) {
    if (pooling == Pooling::Pooled) return percent(count_below(pooled, th), pooled.size());
    double worst = 0.0;
    for (const auto& s : per_tool) worst = std::max(worst, percent(count_below(s, th), s.size()));
    return worst;
  };
  auto bpcer_at = [&](double th) {
    return percent(bona.size() - count_below(bona, th), bona.size());
  };

  EvalReport report;
  report.pooling = pooling;
  report.n_bonafide = bona.size();
  report.n_attack = pooled.size();
  report.det_points.reserve(thresholds.size());
  for (double th : thresholds) report.det_points.push_back({th, apcer_at(th), bpcer_at(th)});

  // First index where APCER - BPCER >= 0. The last point (+inf) has
  // APCER = 100, BPCER = 0, so one always exists.
  const auto& pts = report.det_points;
  std::size_t cross = 0;
  while (pts[cross].apcer - pts[cross].bpcer < 0.0) ++cross;
  const double diff_hi = pts[cross].apcer - pts[cross].bpcer;
  if (diff_hi == 0.0 || cross == 0) {
    report.d_eer = 0.5 * (pts[cross].apcer + pts[cross].bpcer);
    report.eer_threshold = pts[cross].threshold;
  } else {
    const auto& lo = pts[cross - 1];
    const auto& hi = pts[cross];
    const double diff_lo = lo.apcer - lo.bpcer;  // < 0
    const double alpha = -diff_lo / (diff_hi - diff_lo);
    report.d_eer = lo.apcer + alpha * (hi.apcer - lo.apcer);
    report.eer_threshold = std::abs(diff_lo) <= std::abs(diff_hi) ? lo.threshold : hi.threshold;
  }

  auto operating_point = [&](double apcer_limit) {
    double best = 100.0;
    for (const auto& p : pts) {
      if (p.apcer <= apcer_limit) best = std::min(best, p.bpcer);
    }
    return best;
  };
  report.bpcer10 = operating_point(10.0);
  report.bpcer20 = operating_point(5.0);

  const double th = report.eer_threshold;
  for (const auto& [tool, s] : scores.attack_scores) {
    if (!s.empty()) report.per_tool_apcer_at_eer[tool] = apcer(s, th);
  }
  auto& c = report.confusion;
  c.bonafide_as_bonafide = count_below(bona, th);
  c.bonafide_as_attack = bona.size() - c.bonafide_as_bonafide;
  c.attack_as_bonafide = count_below(pooled, th);
  c.attack_as_attack = pooled.size() - c.attack_as_bonafide;
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["pooling"] = to_string(report.pooling);
  doc["d_eer"] = report.d_eer;
  doc["eer_threshold"] = threshold_json(report.eer_threshold);
  doc["bpcer10"] = report.bpcer10;
  doc["bpcer20"] = report.bpcer20;
  doc["n_bonafide"] = report.n_bonafide;
  doc["n_attack"] = report.n_attack;
  doc["per_tool_apcer_at_eer"] = report.per_tool_apcer_at_eer;
  doc["confusion"] = {
      {"bonafide_as_bonafide", report.confusion.bonafide_as_bonafide},
      {"bonafide_as_attack", report.confusion.bonafide_as_attack},
      {"attack_as_bonafide", report.confusion.attack_as_bonafide},
      {"attack_as_attack", report.confusion.attack_as_attack},
  };
  auto& det = doc["det_points"] = nlohmann::json::array();
  for (const auto& p : report.det_points) {
    det.push_back({{"threshold", threshold_json(p.threshold)}, {"apcer", p.apcer}, {"bpcer", p.bpcer}});
  }
  return doc;
}

void write_det_csv(std::ostream& out, const EvalReport& report) {
  out << "threshold,apcer,bpcer\n";
  for (const auto& p : report.det_points) {
    out << (std::isfinite(p.threshold) ? core::format_double(p.threshold) : std::string("inf"))
        << ',' << core::format_double(p.apcer) << ',' << core::format_double(p.bpcer) << '\n';
  }
}

}  // namespace smad::metrics
