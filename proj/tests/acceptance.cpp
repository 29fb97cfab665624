// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "smad/cli.hpp"
#include "smad/inference.hpp"
#include "smad/loss.hpp"
#include "smad/metrics.hpp"
#include "smad/model.hpp"
#include "smad/projection.hpp"
#include "smad/protocol.hpp"

using namespace smad;
namespace fs = std::filesystem;

namespace {

constexpr double kNoLimit = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> body;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome gradients() {
  Rng rng(RngSeed{2024});
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 2 + rng.uniform_index(10);
    std::vector<std::size_t> hidden(rng.uniform_index(3));
    for (auto& h : hidden) h = 2 + rng.uniform_index(15);
    const std::size_t out = 2 + rng.uniform_index(8);
    const auto params = fixture::random_params(rng, in, hidden, out, true);
    const std::size_t b = 4 + rng.uniform_index(13);
    model::Batch batch{
        fixture::gaussian(rng, static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in)),
        fixture::random_labels(rng, b, 2 + static_cast<int>(rng.uniform_index(3)))};
    const loss::LossConfig cfg{0.2 + rng.uniform01(), loss::MiningMode::SemiHard};
    const auto analytic = model::batch_loss_and_grads(params, batch, cfg);
    const auto numeric = oracle::numeric_gradient(params, batch, cfg, 1e-5);
    worst = std::max(worst, oracle::relative_error(analytic.grads, numeric));
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over 20 instances"};
}

Outcome mining() {
  Rng rng(RngSeed{77});
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 3 + rng.uniform_index(62);
    const int classes = 2 + static_cast<int>(rng.uniform_index(7));
    const auto labels = fixture::random_labels(rng, b, classes);
    const auto x = trial % 3 == 0 ? fixture::lattice(rng, static_cast<Eigen::Index>(b), 2)
                                  : fixture::gaussian(rng, static_cast<Eigen::Index>(b), 4);
    const double margin = 0.5 * rng.uniform01();
    const auto d = oracle::sq_distances(x);
    const auto got = loss::mine_batch(x, labels, {margin, loss::MiningMode::SemiHard});
    const auto want = oracle::mine(d, labels, loss::MiningMode::SemiHard, margin);
    bool ok = got.triplets == want.triplets;
    for (const auto& t : want.triplets) {
      const double d_ap = d(t.anchor, t.positive);
      const double d_an = d(t.anchor, t.negative);
      ok = ok && loss::classify_triplet(d_ap, d_an, margin) == oracle::kind_of(d_ap, d_an, margin);
    }
    agree += ok ? 1 : 0;
  }
  return {agree == 100, std::to_string(agree) + "/100 batches identical"};
}

metrics::ScoreSet random_scores(Rng& rng) {
  metrics::ScoreSet s;
  const bool coarse = rng.uniform_index(2) == 0;
  auto draw = [&](double shift) {
    const double v = rng.normal() + shift;
    return coarse ? std::round(v * 4.0) / 4.0 : v;
  };
  const std::size_t n_bona = 1 + rng.uniform_index(500);
  for (std::size_t i = 0; i < n_bona; ++i) s.bonafide_scores.push_back(draw(0.0));
  const std::size_t tools = 1 + rng.uniform_index(4);
  const double shift = 3.0 * rng.uniform01();
  for (std::size_t t = 0; t < tools; ++t) {
    auto& v = s.attack_scores["tool" + std::to_string(t)];
    const std::size_t n = 1 + rng.uniform_index(500 / tools);
    for (std::size_t i = 0; i < n; ++i) v.push_back(draw(shift + 0.5 * static_cast<double>(t)));
  }
  return s;
}

Outcome metric_oracle() {
  Rng rng(RngSeed{5150});
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_scores(rng);
    std::vector<std::vector<double>> groups;
    for (const auto& [tool, v] : s.attack_scores) groups.push_back(v);
    for (auto pooling : {metrics::Pooling::Pooled, metrics::Pooling::WorstCase}) {
      const auto r = metrics::det_and_operating_points(s, pooling);
      const auto o = oracle::sweep(s.bonafide_scores, groups, pooling == metrics::Pooling::WorstCase);
      if (r.det_points.size() != o.sweep.size()) return {false, "sweep length differs"};
      for (std::size_t i = 0; i < o.sweep.size(); ++i) {
        if (r.det_points[i].threshold != o.sweep[i].threshold) return {false, "thresholds differ"};
        worst = std::max({worst, std::abs(r.det_points[i].apcer - o.sweep[i].apcer),
                          std::abs(r.det_points[i].bpcer - o.sweep[i].bpcer)});
      }
      worst = std::max({worst, std::abs(r.d_eer - o.d_eer), std::abs(r.bpcer10 - o.bpcer10),
                        std::abs(r.bpcer20 - o.bpcer20)});
    }
    const auto pooled = s.pooled_attacks();
    for (int k = 0; k < 10; ++k) {
      const double th = 2.0 * rng.normal();
      worst = std::max({worst,
                        std::abs(metrics::apcer(pooled, th) - oracle::rate_below(pooled, th)),
                        std::abs(metrics::bpcer(s.bonafide_scores, th) -
                                 (100.0 - oracle::rate_below(s.bonafide_scores, th)))});
    }
  }

  metrics::ScoreSet separated;
  separated.bonafide_scores = {0.1, 0.2, 0.3};
  separated.attack_scores["X"] = {0.5, 0.6, 0.7};
  const double d_sep = metrics::det_and_operating_points(separated).d_eer;

  metrics::ScoreSet same;
  for (int i = 0; i < 1000; ++i) same.bonafide_scores.push_back(rng.normal());
  same.attack_scores["X"] = same.bonafide_scores;
  const double d_same = metrics::det_and_operating_points(same).d_eer;

  const bool ok = worst <= 1e-9 && d_sep == 0.0 && std::abs(d_same - 50.0) <= 1.0;
  return {ok, "max deviation " + fmt("%.1e", worst) + ", separated D-EER " + fmt("%g", d_sep) +
                  ", identical D-EER " + fmt("%.3f", d_same)};
}

Outcome unit_examples() {
  model::ModelParams id;
  id.l2_normalize_output = false;
  id.layers.push_back({Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1)});
  auto bf = [](std::string name, double v) {
    return fixture::sample(name, name, "bonafide", {v});
  };
  const inference::TemplateSet t({bf("a", std::sqrt(0.2)), bf("b", -std::sqrt(0.4))});
  const double phi = inference::score(id, std::vector<double>{0.0}, t);
  const double l = loss::triplet_loss(0.8, 0.3, 0.2);

  std::vector<std::string> failed;
  if (l != 0.7) failed.push_back("triplet_loss");
  if (!(phi == 0.3 || std::nextafter(0.3, phi) == phi)) failed.push_back("phi_avg");
  if (inference::decide(0.3, 0.3) != 0 || inference::decide(0.29, 0.3) != 1) failed.push_back("decide");
  if (loss::triplet_loss(0.3, 0.8, 0.2) != 0.0) failed.push_back("easy triplet");
  if (loss::classify_triplet(0.3, 0.4, 0.2) != loss::TripletKind::SemiHard) failed.push_back("classify");
  const std::vector<double> attacks = {0.1, 0.2, 0.3, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9};
  if (metrics::apcer(attacks, 0.5) != 30.0) failed.push_back("apcer");
  if (metrics::bpcer(std::vector<double>{0.1, 0.2, 0.3, 0.5}, 0.5) != 25.0) failed.push_back("bpcer");

  std::string detail = "triplet_loss " + fmt("%.17g", l) + ", phi_avg " + fmt("%.17g", phi);
  for (const auto& f : failed) detail += ", failed " + f;
  return {failed.empty(), detail};
}

Outcome few_shot_trend() {
  std::vector<double> eer0, eer10, b0, b10, b15;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    protocol::ExperimentConfig cfg;
    core::SyntheticSpec spec;
    spec.samples_per_class = 200;
    spec.seed = RngSeed{s * 101};
    cfg.data.synthetic = spec;
    cfg.train.epochs = 20;
    cfg.train.adam.learning_rate = 1e-3;
    cfg.apply_seed(RngSeed{s});
    const std::vector<int> ks = {0, 10, 15};
    const auto rows = protocol::few_shot_sweep(cfg, ks);
    eer0.push_back(rows[0].d_eer);
    eer10.push_back(rows[1].d_eer);
    b0.push_back(rows[0].bpcer10);
    b10.push_back(rows[1].bpcer10);
    b15.push_back(rows[2].bpcer10);
  }
  const double m0 = median(eer0), m10 = median(eer10);
  const double reduction = m0 > 0.0 ? 1.0 - m10 / m0 : 0.0;
  const bool ok = reduction >= 0.30 && median(b10) < median(b0) && median(b15) < median(b0);
  return {ok, "median D-EER " + fmt("%.2f", m0) + " -> " + fmt("%.2f", m10) + " (" +
                  fmt("%.0f", 100.0 * reduction) + "% lower), median BPCER10 k=0/10/15 " +
                  fmt("%.2f", median(b0)) + "/" + fmt("%.2f", median(b10)) + "/" +
                  fmt("%.2f", median(b15))};
}

Outcome template_variance() {
  core::SyntheticSpec spec;
  spec.samples_per_class = 400;
  spec.domain_shift = 0.0;
  spec.seed = RngSeed{606};
  const auto src = core::generate_synthetic(spec).source;
  const auto pool = src.bona_fide_only();
  Rng rng(RngSeed{17});
  const auto p = fixture::random_params(rng, spec.dim, {128}, 64, true);

  auto pooled_variance = [&](int n) {
    double total = 0.0;
    for (std::size_t probe = 0; probe < 10; ++probe) {
      const auto& x = src[src.size() - 1 - probe].vector;
      std::vector<double> s;
      for (std::uint64_t draw = 0; draw < 100; ++draw) {
        s.push_back(inference::score(p, x, inference::select_templates(
                                               pool, n, derive_seed(RngSeed{99}, draw))));
      }
      double mean = 0.0;
      for (double v : s) mean += v;
      mean /= static_cast<double>(s.size());
      double var = 0.0;
      for (double v : s) var += (v - mean) * (v - mean);
      total += var / static_cast<double>(s.size() - 1);
    }
    return total;
  };
  const double ratio = pooled_variance(4) / pooled_variance(1);
  return {ratio > 0.125 && ratio < 0.5, "var(n=4)/var(n=1) = " + fmt("%.3f", ratio)};
}

Outcome tsne() {
  const Eigen::Index n = 1000;
  Rng rng(RngSeed{1000});
  Eigen::MatrixXd x = fixture::gaussian(rng, n, 10);
  x.bottomRows(n / 2).col(0).array() += 20.0;

  const auto a = projection::compute_affinities(x, 30.0);
  double invariant = (a.joint - a.joint.transpose()).cwiseAbs().maxCoeff();
  invariant = std::max(invariant, std::abs(a.joint.sum() - 1.0));
  for (Eigen::Index i = 0; i < n; ++i) {
    invariant = std::max(invariant, std::abs(a.conditional.row(i).sum() - 1.0));
  }

  projection::TsneConfig cfg;
  cfg.seed = RngSeed{3};
  const auto r = projection::tsne_project(x, cfg);
  const Eigen::Index half = n / 2;
  const Eigen::RowVector2d c0 = r.layout.topRows(half).colwise().mean();
  const Eigen::RowVector2d c1 = r.layout.bottomRows(n - half).colwise().mean();
  Eigen::Index right = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool near0 = (r.layout.row(i) - c0).squaredNorm() < (r.layout.row(i) - c1).squaredNorm();
    right += near0 == (i < half) ? 1 : 0;
  }
  const double purity = static_cast<double>(right) / static_cast<double>(n);
  const bool ok = invariant <= 1e-12 && purity >= 0.95 && r.kl_final < r.kl_after_first_iteration;
  return {ok, "invariant error " + fmt("%.1e", invariant) + ", purity " + fmt("%.3f", purity) +
                  ", KL " + fmt("%.3f", r.kl_after_first_iteration) + " -> " +
                  fmt("%.3f", r.kl_final)};
}

std::string run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "smad");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = smad::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw std::runtime_error("smad " + args[1] + " exited " + std::to_string(code) + ": " + err.str());
  return fixture::lines(out.str()).back();
}

std::string without_wall_clock(const fs::path& manifest) {
  auto doc = nlohmann::json::parse(fixture::read_file(manifest));
  doc.erase("wall_clock_seconds");
  return doc.dump();
}

Outcome determinism() {
  const auto dir = fixture::scratch_dir("acceptance-determinism");
  const nlohmann::json cfg = {
      {"name", "determinism"},
      {"mode", "cross_database"},
      {"seed", 8},
      {"data",
       {{"synthetic",
         {{"n_classes", 5},
          {"dim", 32},
          {"samples_per_class", 60},
          {"cluster_spread", 1.0},
          {"domain_shift", 3.0},
          {"seed", 4}}}}},
      {"train", {{"epochs", 4}, {"learning_rate", 1e-3}, {"hidden_dims", {32}}, {"embedding_dim", 16}}}};
  fixture::write_file(dir / "exp.json", cfg.dump(2));
  const auto config = (dir / "exp.json").string();

  const fs::path train = run_cli({"train", "--config", config, "--out", (dir / "train").string()});
  const auto checkpoint = (train / "checkpoint.json").string();
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const char* root : {"a", "b"}) {
    const auto out = (dir / root).string();
    const fs::path sweep = run_cli({"sweep", "--config", config, "--ks", "0,5,10", "--out", out});
    const fs::path eval =
        run_cli({"evaluate", "--config", config, "--checkpoint", checkpoint, "--out", out});
    pairs.emplace_back(sweep, eval);
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  auto compare = [&](const fs::path& a, const fs::path& b, const std::string& name) {
    ++compared;
    const bool same = name == "run_manifest.json"
                          ? without_wall_clock(a / name) == without_wall_clock(b / name)
                          : fixture::read_file(a / name) == fixture::read_file(b / name);
    if (!same) differing.push_back(name);
  };
  for (const char* f : {"sweep.csv", "run_manifest.json"}) compare(pairs[0].first, pairs[1].first, f);
  for (const char* f : {"report.json", "det.csv", "scores.csv", "run_manifest.json"}) {
    compare(pairs[0].second, pairs[1].second, f);
  }
  std::string detail = std::to_string(compared - differing.size()) + "/" + std::to_string(compared) +
                       " files identical";
  for (const auto& d : differing) detail += ", differs: " + d;
  return {differing.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", 30.0, gradients},
      {2, "mining oracle", 60.0, mining},
      {3, "metric oracle", 60.0, metric_oracle},
      {4, "unit examples", kNoLimit, unit_examples},
      {5, "few-shot trend", 600.0, few_shot_trend},
      {6, "template averaging", 60.0, template_variance},
      {7, "t-SNE properties", 120.0, tsne},
      {8, "determinism", kNoLimit, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", c.budget_seconds) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
