#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smad/core.hpp"
#include "smad/model.hpp"
#include "smad/random.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Labels from `n_classes` classes with at least one positive pair and at
// least two classes present. b >= 3.
inline std::vector<int> random_labels(smad::Rng& rng, std::size_t b, int n_classes) {
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_classes)));
  labels[0] = 0;
  labels[1] = 0;
  labels[2] = 1;
  rng.shuffle(labels);
  return labels;
}

inline Eigen::MatrixXd gaussian(smad::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                double sd = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

// Coarse grid values, so distances tie often.
inline Eigen::MatrixXd lattice(smad::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(rng.uniform_index(3));
  return m;
}

inline smad::model::ModelParams random_params(smad::Rng& rng, std::size_t input_dim,
                                              const std::vector<std::size_t>& hidden,
                                              std::size_t out_dim, bool normalize) {
  smad::model::ModelParams p;
  p.l2_normalize_output = normalize;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out) {
    smad::model::Layer layer;
    layer.weights = gaussian(rng, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in),
                             1.0 / std::sqrt(static_cast<double>(in)));
    layer.bias = gaussian(rng, static_cast<Eigen::Index>(out), 1, 0.1);
    p.layers.push_back(std::move(layer));
    in = out;
  };
  for (auto h : hidden) add(h);
  add(out_dim);
  return p;
}

inline smad::core::LabeledEmbedding sample(std::string id, std::string subject,
                                           const std::string& label, std::vector<double> v,
                                           std::string domain = "d") {
  return {std::move(id), std::move(subject), smad::core::ClassLabel::parse(label),
          std::move(domain), std::move(v)};
}

// `n` samples per class around well-separated means, one subject per sample
// index.
inline smad::core::Dataset clustered(const std::string& name, const std::vector<std::string>& labels,
                                     int n, std::size_t dim, smad::RngSeed seed,
                                     const std::string& domain = "d", double gap = 10.0) {
  smad::Rng rng(seed);
  std::vector<smad::core::LabeledEmbedding> rows;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(dim);
      for (std::size_t k = 0; k < dim; ++k) v[k] = 0.3 * rng.normal();
      v[c % dim] += gap * static_cast<double>(c / dim + 1);
      rows.push_back(sample(name + "-" + std::to_string(c) + "-" + std::to_string(i),
                            name + "-s" + std::to_string(i), labels[c], std::move(v), domain));
    }
  }
  return smad::core::Dataset(name, dim, std::move(rows));
}

inline fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "smad-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace fixture
