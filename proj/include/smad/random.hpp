#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace smad {

struct RngSeed {
  std::uint64_t value = 0;

  friend bool operator==(RngSeed, RngSeed) = default;
};

/// SplitMix64 finalizer. Used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for a named sub-stream, e.g. derive_seed(base, "train").
RngSeed derive_seed(RngSeed base, std::string_view tag);
/// Child seed for an integer-indexed sub-stream, e.g. one per sweep k.
RngSeed derive_seed(RngSeed base, std::uint64_t index);

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions are implemented here because the standard
/// library ones are implementation-defined, and outputs must not depend on
/// which standard library the toolkit was built against.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal (Box-Muller, second variate cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices from [0, n), uniformly, in draw order. The first j
  /// draws of a size-k sample equal a size-j sample from the same seed.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace smad
