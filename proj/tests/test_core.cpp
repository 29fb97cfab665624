#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "smad/core.hpp"
#include "smad/error.hpp"

using namespace smad;
using core::ClassLabel;
using core::Dataset;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return core::parse_manifest(in, "m.csv");
}

std::string manifest_text(const Dataset& ds) {
  std::ostringstream out;
  core::write_manifest(out, ds);
  return out.str();
}

template <typename Fn>
std::string error_of(Fn&& fn, ErrorKind expected) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.kind() == expected);
    return e.what();
  }
  FAIL("expected an error");
  return {};
}

std::vector<double> class_mean(const Dataset& ds, const ClassLabel& label) {
  std::vector<double> mean(ds.dim(), 0.0);
  int n = 0;
  for (const auto& e : ds.embeddings()) {
    if (e.label != label) continue;
    for (std::size_t k = 0; k < ds.dim(); ++k) mean[k] += e.vector[k];
    ++n;
  }
  for (auto& m : mean) m /= n;
  return mean;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("class labels parse and compare exactly") {
    CHECK(ClassLabel::parse("bonafide").is_bona_fide());
    const auto m = ClassLabel::parse("morph:FaceFusion");
    CHECK_FALSE(m.is_bona_fide());
    CHECK(m.tool() == "FaceFusion");
    CHECK(m.to_string() == "morph:FaceFusion");
    CHECK(ClassLabel::morph("FaceFusion") != ClassLabel::morph("facefusion"));
    CHECK_THROWS_AS(ClassLabel::morph(""), Error);
    CHECK_THROWS_AS(ClassLabel::parse("morph:"), Error);
    CHECK_THROWS_AS(ClassLabel::parse("Bonafide"), Error);
  }

  TEST_CASE("three-row manifest parses in order") {
    const auto ds = parse(
        "id,subject_id,label,domain,v0,v1,v2,v3\n"
        "a,s1,bonafide,x,1,2,3,4\n"
        "b,s1,morph:FM,x,0.5,0,0,-1\n"
        "c,s2,bonafide,x,0,0,0,1e-3\n");
    CHECK(ds.size() == 3);
    CHECK(ds.dim() == 4);
    CHECK(ds[0].id == "a");
    CHECK(ds[1].label == ClassLabel::morph("FM"));
    CHECK(ds[2].vector[3] == doctest::Approx(1e-3));
    CHECK(ds.subjects() == std::vector<std::string>{"s1", "s2"});
  }

  TEST_CASE("short row is reported with its line number") {
    const auto msg = error_of(
        [] {
          parse(
              "id,subject_id,label,domain,v0,v1,v2,v3\n"
              "a,s1,bonafide,x,1,2,3,4\n"
              "b,s1,bonafide,x,1,2,3\n");
        },
        ErrorKind::Parse);
    CHECK(msg.find("m.csv:3") != std::string::npos);
  }

  TEST_CASE("non-numeric entry is a parse error naming the line") {
    const auto msg = error_of(
        [] {
          parse(
              "id,subject_id,label,domain,v0,v1\n"
              "a,s1,bonafide,x,1,2\n"
              "b,s1,bonafide,x,1,zz\n");
        },
        ErrorKind::Parse);
    CHECK(msg.find("m.csv:3") != std::string::npos);
  }

  TEST_CASE("header-only file is an empty dataset") {
    const auto msg = error_of([] { parse("id,subject_id,label,domain,v0\n"); }, ErrorKind::Parse);
    CHECK(msg.find("empty dataset") != std::string::npos);
  }

  TEST_CASE("duplicate id is a validation error") {
    error_of(
        [] {
          parse(
              "id,subject_id,label,domain,v0\n"
              "a,s1,bonafide,x,1\n"
              "a,s2,bonafide,x,2\n");
        },
        ErrorKind::Validation);
  }

  TEST_CASE("missing manifest file is an I/O error") {
    error_of([] { core::load_manifest("/nonexistent/nowhere.csv"); }, ErrorKind::Io);
  }

  TEST_CASE("non-finite components are rejected") {
    CHECK_THROWS_AS(parse("id,subject_id,label,domain,v0\na,s,bonafide,x,nan\n"), Error);
  }

  TEST_CASE("manifest round-trip is bit-exact") {
    Rng rng(RngSeed{5});
    std::vector<core::LabeledEmbedding> rows;
    for (int i = 0; i < 20; ++i) {
      std::vector<double> v(6);
      for (auto& x : v) x = rng.normal() * std::pow(10.0, rng.normal() * 5);
      rows.push_back(fixture::sample("id" + std::to_string(i), "s" + std::to_string(i % 4),
                                     i % 3 ? "morph:OCV" : "bonafide", v));
    }
    const Dataset ds("r", 6, rows);
    const auto text = manifest_text(ds);
    const auto back = parse(text);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back[i].vector == ds[i].vector);
      CHECK(back[i].label == ds[i].label);
    }
    CHECK(manifest_text(back) == text);
  }

  TEST_CASE("synthetic default benchmark counts") {
    core::SyntheticSpec spec;
    spec.seed = RngSeed{1};
    const auto pair = core::generate_synthetic(spec);
    CHECK(pair.source.size() == 1000);
    CHECK(pair.target.size() == 1000);
    CHECK(pair.source.labels().size() == 5);
    CHECK(pair.target.labels().size() == 5);
    CHECK(pair.source.dim() == 64);

    const auto src = pair.source.subjects();
    const auto tgt = pair.target.subjects();
    const std::set<std::string> s(src.begin(), src.end());
    for (const auto& t : tgt) CHECK(s.count(t) == 0);
  }

  TEST_CASE("synthetic generation is deterministic") {
    core::SyntheticSpec spec;
    spec.samples_per_class = 20;
    spec.seed = RngSeed{99};
    const auto a = core::generate_synthetic(spec);
    const auto b = core::generate_synthetic(spec);
    CHECK(manifest_text(a.source) == manifest_text(b.source));
    CHECK(manifest_text(a.target) == manifest_text(b.target));
    spec.seed = RngSeed{100};
    CHECK(manifest_text(core::generate_synthetic(spec).source) != manifest_text(a.source));
  }

  TEST_CASE("zero shift leaves class means in place") {
    core::SyntheticSpec spec;
    spec.n_classes = 3;
    spec.dim = 2;
    spec.samples_per_class = 10000;
    spec.domain_shift = 0.0;
    spec.seed = RngSeed{17};
    const auto pair = core::generate_synthetic(spec);
    const double tol = 5.0 * spec.cluster_spread / std::sqrt(10000.0);
    for (const auto& label : pair.source.labels()) {
      const auto a = class_mean(pair.source, label);
      const auto b = class_mean(pair.target, label);
      CHECK(std::hypot(a[0] - b[0], a[1] - b[1]) < tol);
    }
  }

  TEST_CASE("explicit shift vector translates the target means") {
    core::SyntheticSpec spec;
    spec.n_classes = 2;
    spec.dim = 2;
    spec.samples_per_class = 10000;
    spec.shift_vector = {5.0, -2.0};
    spec.seed = RngSeed{3};
    const auto pair = core::generate_synthetic(spec);
    const double tol = 5.0 / std::sqrt(10000.0);
    for (const auto& label : pair.source.labels()) {
      const auto a = class_mean(pair.source, label);
      const auto b = class_mean(pair.target, label);
      CHECK(std::hypot(b[0] - a[0] - 5.0, b[1] - a[1] + 2.0) < tol);
    }
  }

  TEST_CASE("scalar shift has the requested magnitude") {
    core::SyntheticSpec spec;
    spec.dim = 8;
    spec.samples_per_class = 10000;
    spec.domain_shift = 3.0;
    spec.seed = RngSeed{8};
    const auto pair = core::generate_synthetic(spec);
    const auto label = ClassLabel::bona_fide();
    const auto a = class_mean(pair.source, label);
    const auto b = class_mean(pair.target, label);
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sq += (b[k] - a[k]) * (b[k] - a[k]);
    CHECK(std::sqrt(sq) == doctest::Approx(3.0).epsilon(0.02));
  }

  TEST_CASE("synthetic spec json requires every field") {
    const nlohmann::json doc = {{"n_classes", 5},      {"dim", 4},  {"samples_per_class", 3},
                                {"cluster_spread", 1.0}, {"domain_shift", 3.0}, {"seed", 1}};
    CHECK(core::synthetic_spec_from_json(doc).dim == 4);
    auto missing = doc;
    missing.erase("cluster_spread");
    const auto msg =
        error_of([&] { core::synthetic_spec_from_json(missing); }, ErrorKind::Validation);
    CHECK(msg.find("cluster_spread") != std::string::npos);

    auto vec = doc;
    vec["domain_shift"] = {1.0, 0.0, 0.0, 0.0};
    CHECK(core::synthetic_spec_from_json(vec).shift_vector.size() == 4);
    vec["domain_shift"] = {1.0, 0.0};
    CHECK_THROWS_AS(core::synthetic_spec_from_json(vec), Error);

    auto bad = doc;
    bad["cluster_spread"] = 0.0;
    CHECK_THROWS_AS(core::synthetic_spec_from_json(bad), Error);
    bad = doc;
    bad["n_classes"] = 1;
    CHECK_THROWS_AS(core::synthetic_spec_from_json(bad), Error);
    bad = doc;
    bad["extra"] = 1;
    CHECK_THROWS_AS(core::synthetic_spec_from_json(bad), Error);
  }

  TEST_CASE("split of ten subjects at 0.6") {
    const auto ds = fixture::clustered("ds", {"bonafide", "morph:A"}, 10, 3, RngSeed{1});
    const auto split = core::split_subject_disjoint(ds, 0.6, RngSeed{4});
    CHECK(split.train.subjects().size() == 6);
    CHECK(split.test.subjects().size() == 4);
    CHECK(split.train.size() + split.test.size() == ds.size());
  }

  TEST_CASE("split of two subjects at 0.5") {
    const auto ds = fixture::clustered("ds", {"bonafide"}, 2, 3, RngSeed{1});
    const auto split = core::split_subject_disjoint(ds, 0.5, RngSeed{4});
    CHECK(split.train.subjects().size() == 1);
    CHECK(split.test.subjects().size() == 1);
  }

  TEST_CASE("split needs two subjects") {
    const auto ds = fixture::clustered("ds", {"bonafide", "morph:A"}, 1, 3, RngSeed{1});
    CHECK_THROWS_AS(core::split_subject_disjoint(ds, 0.5, RngSeed{4}), Error);
  }

  TEST_CASE("split property: disjoint subjects, union preserved, order kept") {
    Rng gen(RngSeed{2024});
    for (int trial = 0; trial < 200; ++trial) {
      const int n_subjects = 2 + static_cast<int>(gen.uniform_index(30));
      const int n_rows = n_subjects + static_cast<int>(gen.uniform_index(60));
      std::vector<core::LabeledEmbedding> rows;
      for (int i = 0; i < n_rows; ++i) {
        const int subj = i < n_subjects ? i : static_cast<int>(gen.uniform_index(n_subjects));
        rows.push_back(fixture::sample("r" + std::to_string(i), "s" + std::to_string(subj),
                                       "bonafide", {gen.normal()}));
      }
      gen.shuffle(rows);
      const Dataset ds("p", 1, rows);
      const double fraction = 0.05 + 0.9 * gen.uniform01();
      const auto split = core::split_subject_disjoint(ds, fraction, RngSeed{gen.next_u64()});

      const auto tr = split.train.subjects();
      const auto te = split.test.subjects();
      const std::set<std::string> train_subjects(tr.begin(), tr.end());
      for (const auto& s : te) CHECK(train_subjects.count(s) == 0);
      CHECK(tr.size() + te.size() == static_cast<std::size_t>(n_subjects));
      const auto expected = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::ceil(fraction * n_subjects - 1e-9)), 1, n_subjects - 1);
      CHECK(tr.size() == expected);

      std::multiset<std::string> before, after;
      for (const auto& e : ds.embeddings()) before.insert(e.id);
      for (const auto& e : split.train.embeddings()) after.insert(e.id);
      for (const auto& e : split.test.embeddings()) after.insert(e.id);
      CHECK(before == after);

      // Relative order within each side follows the input.
      std::size_t pos = 0;
      for (const auto& e : split.train.embeddings()) {
        while (pos < ds.size() && ds[pos].id != e.id) ++pos;
        CHECK(pos < ds.size());
      }
    }
  }

  TEST_CASE("split is a pure function of the seed") {
    const auto ds = fixture::clustered("ds", {"bonafide", "morph:A"}, 12, 2, RngSeed{1});
    const auto a = core::split_subject_disjoint(ds, 0.6, RngSeed{4});
    const auto b = core::split_subject_disjoint(ds, 0.6, RngSeed{4});
    CHECK(manifest_text(a.train) == manifest_text(b.train));
    CHECK(manifest_text(a.test) == manifest_text(b.test));
  }

  TEST_CASE("rng sampling without replacement is prefix stable") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      Rng a(RngSeed{s});
      Rng b(RngSeed{s});
      const auto big = a.sample_without_replacement(50, 12);
      const auto small = b.sample_without_replacement(50, 4);
      CHECK(std::equal(small.begin(), small.end(), big.begin()));
      CHECK(std::set<std::size_t>(big.begin(), big.end()).size() == 12);
    }
  }

  TEST_CASE("derived seeds differ by tag and index") {
    const RngSeed base{42};
    CHECK(derive_seed(base, "train") != derive_seed(base, "templates"));
    CHECK(derive_seed(base, std::uint64_t{10}) != derive_seed(base, std::uint64_t{15}));
    CHECK(derive_seed(base, "train") == derive_seed(RngSeed{42}, "train"));
  }
}
