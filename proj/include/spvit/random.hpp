#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace spvit {

/// Seeded generator with platform-stable distributions. The std engines are
/// fully specified but the std distributions are not, so sampling is done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), rejection sampled (no modulo bias).
  std::uint64_t index(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  template <typename V>
  void shuffle(std::span<V> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace spvit
