#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace vafuse {

/// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x) noexcept;

/// FNV-1a over the bytes of `text`.
std::uint64_t hash_name(std::string_view text) noexcept;

/// Counter-based generator: output i is mix64(key, i), so streams are
/// reproducible on every platform and independent of call interleaving.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(mix64(key ^ 0x9e3779b97f4a7c15ULL)), counter_(counter) {}
  CounterRng(std::uint64_t seed, std::string_view stream) noexcept
      : CounterRng(seed ^ mix64(hash_name(stream))) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double next_double() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_double(); }
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace vafuse
