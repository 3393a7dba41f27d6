#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace eqinv {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent streams from one seed.
std::uint64_t mix_seed(std::uint64_t x);

/// Stream `index` of the family rooted at `seed`. Counter-based, so stream i
/// does not depend on how many other streams were created.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n). Rejection sampling, no modulo bias.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Standard normal via Box-Muller.
double normal(Rng& rng);

/// `count` distinct values from [0, n) uniformly, in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t count);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace eqinv
