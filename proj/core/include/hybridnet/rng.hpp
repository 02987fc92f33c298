#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace hybridnet {

/// One step of splitmix64; advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent seed for a sub-stream (e.g. per record index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// xoshiro256** generator seeded through splitmix64. The integer stream is
/// platform independent; floating draws are built from the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (the spare value is cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hybridnet
