#include "fedchain/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedchain {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent_seed, std::string_view label) {
  return splitmix64(splitmix64(parent_seed) ^ fnv1a64(label));
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

RngStream RngStream::derive(std::string_view label) const {
  return RngStream(derive_seed(seed_, label));
}

std::uint64_t RngStream::next_u64() { return gen_(); }

double RngStream::next_double() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  // Rejection sampling over the top of the range to avoid modulo bias.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % bound;
}

double RngStream::next_gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  // u1 in (0, 1] keeps the log finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_gaussian_ = true;
  return r * std::cos(theta);
}

double RngStream::next_laplace() {
  double u;
  do {
    u = next_double();
  } while (u == 0.0);  // u in (0, 1) keeps both tails finite
  double t = u - 0.5;
  return (t < 0.0 ? 1.0 : -1.0) * std::log(1.0 - 2.0 * std::abs(t));
}

}  // namespace fedchain
