#include "smad/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json_fields.hpp"
#include "smad/error.hpp"

namespace smad::core {

namespace {

constexpr const char* kBonaFideText = "bonafide";
constexpr const char* kMorphPrefix = "morph:";
constexpr int kFixedColumns = 4;

// Class means are N(0, I) scaled so their expected norm is this radius,
// whatever the dimension. Keeps the default benchmark's difficulty fixed
// as dim changes.
constexpr double kMeanRadius = 4.0;

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

ClassLabel ClassLabel::morph(std::string tool_name) {
  if (tool_name.empty()) throw validation_error("morph label needs a non-empty tool name");
  return ClassLabel(std::move(tool_name));
}

ClassLabel ClassLabel::parse(const std::string& text) {
  if (text == kBonaFideText) return bona_fide();
  const std::string prefix = kMorphPrefix;
  if (text.rfind(prefix, 0) == 0) return morph(text.substr(prefix.size()));
  throw parse_error("unknown label '" + text + "' (expected 'bonafide' or 'morph:<tool>')");
}

std::string ClassLabel::to_string() const {
  return is_bona_fide() ? std::string(kBonaFideText) : std::string(kMorphPrefix) + tool_;
}

Dataset::Dataset(std::string name, std::size_t dim, std::vector<LabeledEmbedding> embeddings)
    : name_(std::move(name)), dim_(dim), embeddings_(std::move(embeddings)) {
  if (dim_ == 0) throw validation_error("dataset '" + name_ + "': dimension must be positive");
  std::unordered_set<std::string> seen;
  seen.reserve(embeddings_.size());
  for (const auto& e : embeddings_) {
    if (e.vector.size() != dim_) {
      throw validation_error("dataset '" + name_ + "': embedding '" + e.id + "' has dimension " +
                             std::to_string(e.vector.size()) + ", expected " +
                             std::to_string(dim_));
    }
    for (double v : e.vector) {
      if (!std::isfinite(v)) {
        throw validation_error("dataset '" + name_ + "': embedding '" + e.id +
                               "' has a non-finite component");
      }
    }
    if (!seen.insert(e.id).second) {
      throw validation_error("dataset '" + name_ + "': duplicate id '" + e.id + "'");
    }
  }
}

std::vector<ClassLabel> Dataset::labels() const {
  std::vector<ClassLabel> out;
  std::set<std::string> seen;
  for (const auto& e : embeddings_) {
    if (seen.insert(e.label.to_string()).second) out.push_back(e.label);
  }
  return out;
}

std::vector<std::string> Dataset::subjects() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : embeddings_) {
    if (seen.insert(e.subject_id).second) out.push_back(e.subject_id);
  }
  return out;
}

Dataset Dataset::bona_fide_only() const {
  std::vector<LabeledEmbedding> kept;
  for (const auto& e : embeddings_) {
    if (e.label.is_bona_fide()) kept.push_back(e);
  }
  return Dataset(name_, dim_, std::move(kept));
}

Dataset parse_manifest(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error(source_name + ": empty dataset");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_fields(line);
  const std::vector<std::string> fixed = {"id", "subject_id", "label", "domain"};
  if (header.size() <= static_cast<std::size_t>(kFixedColumns) ||
      !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw parse_error(source_name + ":1: header must be id,subject_id,label,domain,v0,...");
  }
  const std::size_t dim = header.size() - kFixedColumns;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[kFixedColumns + k] != "v" + std::to_string(k)) {
      throw parse_error(source_name + ":1: expected column 'v" + std::to_string(k) + "', found '" +
                        header[kFixedColumns + k] + "'");
    }
  }

  std::vector<LabeledEmbedding> rows;
  std::unordered_map<std::string, std::size_t> first_line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";

    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw parse_error(where + "expected " + std::to_string(header.size()) + " columns (dim " +
                        std::to_string(dim) + "), found " + std::to_string(fields.size()));
    }
    LabeledEmbedding e;
    e.id = std::move(fields[0]);
    e.subject_id = std::move(fields[1]);
    e.domain = std::move(fields[3]);
    if (e.id.empty()) throw parse_error(where + "empty id");
    try {
      e.label = ClassLabel::parse(fields[2]);
    } catch (const Error& err) {
      throw parse_error(where + err.what());
    }
    e.vector.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto& cell = fields[kFixedColumns + k];
      if (!parse_double(cell, e.vector[k])) {
        throw parse_error(where + "column v" + std::to_string(k) + ": not a number: '" + cell + "'");
      }
      if (!std::isfinite(e.vector[k])) {
        throw parse_error(where + "column v" + std::to_string(k) + ": non-finite value");
      }
    }
    auto [it, inserted] = first_line.emplace(e.id, line_no);
    if (!inserted) {
      throw validation_error(where + "duplicate id '" + e.id + "' (first seen on line " +
                             std::to_string(it->second) + ")");
    }
    rows.push_back(std::move(e));
  }
  if (rows.empty()) throw parse_error(source_name + ": empty dataset");
  return Dataset(source_name, dim, std::move(rows));
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open manifest '" + path.string() + "'");
  return parse_manifest(in, path.string());
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

void write_manifest(std::ostream& out, const Dataset& ds) {
  out << "id,subject_id,label,domain";
  for (std::size_t k = 0; k < ds.dim(); ++k) out << ",v" << k;
  out << '\n';
  for (const auto& e : ds.embeddings()) {
    out << e.id << ',' << e.subject_id << ',' << e.label.to_string() << ',' << e.domain;
    for (double v : e.vector) out << ',' << format_double(v);
    out << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write manifest '" + path.string() + "'");
  write_manifest(out, ds);
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw validation_error("n_classes must be >= 2");
  if (dim < 1) throw validation_error("dim must be >= 1");
  if (samples_per_class < 1) throw validation_error("samples_per_class must be >= 1");
  if (!(cluster_spread > 0.0) || !std::isfinite(cluster_spread)) {
    throw validation_error("cluster_spread must be positive");
  }
  if (shift_vector.empty()) {
    if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift)) {
      throw validation_error("domain_shift magnitude must be a finite non-negative number");
    }
  } else {
    if (shift_vector.size() != static_cast<std::size_t>(dim)) {
      throw validation_error("domain_shift vector must have length dim");
    }
    for (double v : shift_vector) {
      if (!std::isfinite(v)) throw validation_error("domain_shift vector must be finite");
    }
  }
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc) {
  detail::JsonFields f(doc, "");
  SyntheticSpec spec;
  spec.n_classes = f.get<int>("n_classes");
  spec.dim = f.get<int>("dim");
  spec.samples_per_class = f.get<int>("samples_per_class");
  spec.cluster_spread = f.get<double>("cluster_spread");
  const auto& shift = f.raw("domain_shift");
  if (shift.is_number()) {
    spec.domain_shift = shift.get<double>();
  } else if (shift.is_array()) {
    try {
      spec.shift_vector = shift.get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw validation_error("field 'domain_shift' must be a number or an array of numbers");
    }
    if (spec.shift_vector.empty()) throw validation_error("field 'domain_shift' is an empty array");
  } else {
    throw validation_error("field 'domain_shift' must be a number or an array of numbers");
  }
  spec.seed = RngSeed{f.get_u64("seed")};
  f.reject_unknown();
  spec.validate();
  return spec;
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json doc;
  doc["n_classes"] = spec.n_classes;
  doc["dim"] = spec.dim;
  doc["samples_per_class"] = spec.samples_per_class;
  doc["cluster_spread"] = spec.cluster_spread;
  if (spec.shift_vector.empty()) {
    doc["domain_shift"] = spec.domain_shift;
  } else {
    doc["domain_shift"] = spec.shift_vector;
  }
  doc["seed"] = spec.seed.value;
  return doc;
}

std::string synthetic_tool_name(int morph_index) {
  static const char* const kNames[] = {"FaceFusion", "FaceMorpher", "OpenCV-Morpher",
                                       "UBO-Morpher"};
  if (morph_index >= 0 && morph_index < 4) return kNames[morph_index];
  return "tool" + std::to_string(morph_index + 1);
}

DomainPair generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto dim = static_cast<std::size_t>(spec.dim);
  const auto n_classes = static_cast<std::size_t>(spec.n_classes);

  Rng mean_rng(derive_seed(spec.seed, "class-means"));
  const double mean_scale = kMeanRadius / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim));
  for (auto& m : means) {
    for (double& v : m) v = mean_scale * mean_rng.normal();
  }

  std::vector<double> shift = spec.shift_vector;
  if (shift.empty()) {
    Rng dir_rng(derive_seed(spec.seed, "shift-direction"));
    shift.assign(dim, 0.0);
    double norm2 = 0.0;
    do {
      std::fill(shift.begin(), shift.end(), 0.0);
      for (std::size_t c = 1; c < n_classes; ++c) {
        const double w = dir_rng.uniform01();
        for (std::size_t k = 0; k < dim; ++k) shift[k] += w * (means[c][k] - means[0][k]);
      }
      norm2 = 0.0;
      for (double v : shift) norm2 += v * v;
    } while (norm2 == 0.0);
    const double scale = spec.domain_shift / std::sqrt(norm2);
    for (double& v : shift) v *= scale;
  }

  auto make_domain = [&](const std::string& domain, const std::string& prefix,
                         const std::vector<double>* offset) {
    Rng rng(derive_seed(spec.seed, "samples-" + domain));
    std::vector<LabeledEmbedding> rows;
    rows.reserve(n_classes * static_cast<std::size_t>(spec.samples_per_class));
    for (std::size_t c = 0; c < n_classes; ++c) {
      const ClassLabel label = c == 0 ? ClassLabel::bona_fide()
                                      : ClassLabel::morph(synthetic_tool_name(static_cast<int>(c) - 1));
      const std::string class_tag = c == 0 ? "bf" : "m" + std::to_string(c);
      for (int i = 0; i < spec.samples_per_class; ++i) {
        LabeledEmbedding e;
        e.subject_id = prefix + "-s" + std::to_string(i);
        e.id = e.subject_id + "-" + class_tag;
        e.label = label;
        e.domain = domain;
        e.vector.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
          const double centre = means[c][k] + (offset ? (*offset)[k] : 0.0);
          e.vector[k] = rng.normal(centre, spec.cluster_spread);
        }
        rows.push_back(std::move(e));
      }
    }
    return Dataset(domain, dim, std::move(rows));
  };

  return DomainPair{make_domain("source", "src", nullptr), make_domain("target", "tgt", &shift)};
}

Split split_subject_disjoint(const Dataset& ds, double train_fraction, RngSeed seed) {
  if (ds.empty()) throw validation_error("cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw validation_error("train_fraction must lie in (0, 1)");
  }
  auto subjects = ds.subjects();
  if (subjects.size() < 2) {
    throw validation_error("dataset '" + ds.name() + "' has fewer than 2 distinct subjects");
  }
  Rng rng(seed);
  rng.shuffle(subjects);

  const double exact = train_fraction * static_cast<double>(subjects.size());
  // Round toward train; the epsilon absorbs representation error such as 0.6 * 10.
  auto n_train = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, subjects.size() - 1);

  std::unordered_set<std::string> train_subjects(subjects.begin(), subjects.begin() + n_train);
  std::vector<LabeledEmbedding> train, test;
  for (const auto& e : ds.embeddings()) {
    (train_subjects.count(e.subject_id) ? train : test).push_back(e);
  }
  return Split{Dataset(ds.name() + "-train", ds.dim(), std::move(train)),
               Dataset(ds.name() + "-test", ds.dim(), std::move(test))};
}

}  // namespace smad::core
