#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace esbn {

/// Counter-based generator: draw i is splitmix64(key + i * golden).
///
/// All sampling routines are implemented here (not via <random>
/// distributions) so streams are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Standard normal via Box-Muller (one draw per call, consumes two uniforms).
  double normal();
  /// Uniform integer in [0, bound). bound must be positive.
  std::size_t below(std::size_t bound);

  template <typename T, std::size_t E>
  void shuffle(std::span<T, E> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Independent sub-seed for a named purpose: splitmix64(seed ^ fnv1a64(purpose)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace esbn
