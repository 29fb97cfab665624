#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "smad/random.hpp"

namespace smad::core {

/// Bona fide, or a morph produced by a named tool. Comparison is exact and
/// case-sensitive.
class ClassLabel {
 public:
  static ClassLabel bona_fide() { return ClassLabel(); }
  /// Throws a validation error on an empty tool name.
  static ClassLabel morph(std::string tool_name);
  /// Parses the manifest form: `bonafide` or `morph:<tool>`.
  static ClassLabel parse(const std::string& text);

  bool is_bona_fide() const { return tool_.empty(); }
  /// Empty for bona fide.
  const std::string& tool() const { return tool_; }

  /// Manifest form, also used as the class key everywhere.
  std::string to_string() const;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
  friend auto operator<=>(const ClassLabel& a, const ClassLabel& b) {
    return a.to_string() <=> b.to_string();
  }

 private:
  ClassLabel() = default;
  explicit ClassLabel(std::string tool) : tool_(std::move(tool)) {}
  std::string tool_;
};

struct LabeledEmbedding {
  std::string id;
  std::string subject_id;
  ClassLabel label = ClassLabel::bona_fide();
  std::string domain;
  std::vector<double> vector;
};

/// Ordered, validated collection of embeddings sharing one dimension.
class Dataset {
 public:
  /// Validates: dim > 0, every vector has `dim` finite components, ids are
  /// unique. An empty list is allowed here (splits may produce one); callers
  /// that need data check `empty()`.
  Dataset(std::string name, std::size_t dim, std::vector<LabeledEmbedding> embeddings);

  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return embeddings_.size(); }
  bool empty() const { return embeddings_.empty(); }
  const std::vector<LabeledEmbedding>& embeddings() const { return embeddings_; }
  const LabeledEmbedding& operator[](std::size_t i) const { return embeddings_[i]; }

  /// Distinct labels in first-appearance order.
  std::vector<ClassLabel> labels() const;
  /// Distinct subject ids in first-appearance order.
  std::vector<std::string> subjects() const;
  /// The bona fide members only, in order.
  Dataset bona_fide_only() const;

 private:
  std::string name_;
  std::size_t dim_;
  std::vector<LabeledEmbedding> embeddings_;
};

/// Reads a manifest CSV: header `id,subject_id,label,domain,v0,...,v{D-1}`.
Dataset load_manifest(const std::filesystem::path& path);
/// Same, from an already-open stream. `source_name` names the dataset and
/// prefixes error messages.
Dataset parse_manifest(std::istream& in, const std::string& source_name);
/// Writes a manifest with 17 significant digits per component, LF endings.
void write_manifest(std::ostream& out, const Dataset& ds);
void save_manifest(const std::filesystem::path& path, const Dataset& ds);

/// Parameters of the built-in multi-domain generator.
struct SyntheticSpec {
  int n_classes = 5;
  int dim = 64;
  int samples_per_class = 200;
  double cluster_spread = 1.0;
  /// Scalar magnitude (direction drawn from the seed) when `shift_vector`
  /// is empty; otherwise the explicit translation, of length `dim`.
  double domain_shift = 3.0;
  std::vector<double> shift_vector;
  RngSeed seed{};

  /// Throws a validation error naming the offending field.
  void validate() const;
};

/// Reads a synthetic spec document; every field is required. `domain_shift`
/// is either a number (magnitude) or an array of length `dim`.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SyntheticSpec& spec);

/// Tool names given to the morph classes, in class order. Beyond the named
/// tools, classes are called `tool<k>`.
std::string synthetic_tool_name(int morph_index);

struct DomainPair {
  Dataset source;
  Dataset target;
};

/// Isotropic Gaussian clusters, one per class (class 0 bona fide). The target
/// domain has every class mean translated by the same shift vector. Sample i
/// of every class belongs to subject i of its domain.
DomainPair generate_synthetic(const SyntheticSpec& spec);

struct Split {
  Dataset train;
  Dataset test;
};

/// Subject-disjoint split by subject count; ceil(train_fraction * subjects)
/// subjects go to train, keeping at least one subject on each side.
Split split_subject_disjoint(const Dataset& ds, double train_fraction, RngSeed seed);

/// Round-trip-safe decimal text for a double.
std::string format_double(double v);

}  // namespace smad::core
