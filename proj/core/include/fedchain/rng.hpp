#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedchain {

// Stable 64-bit seed derivation: mixes a parent seed with a textual label.
// Streams derived from the same (seed, label) pair are identical regardless
// of process layout or call order.
std::uint64_t derive_seed(std::uint64_t parent_seed, std::string_view label);

/// Seedable, splittable random stream. Hospitals, the server and each round
/// derive their own streams by label, so scheduling never changes the draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Child stream keyed by label; does not consume state from this stream.
  RngStream derive(std::string_view label) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double next_double();
  // Unbiased uniform integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound);
  // Standard normal via Box-Muller (second draw cached).
  double next_gaussian();
  // Unit-scale Laplace(0, 1) via inverse CDF.
  double next_laplace();

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

}  // namespace fedchain
