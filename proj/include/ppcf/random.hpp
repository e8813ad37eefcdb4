#pragma once

#include <cstdint>
#include <random>

namespace ppcf {

using rng_type = std::mt19937_64;

//! SplitMix64 finalizer; used to derive statistically independent seeds from
//! a base seed and a stream tag.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

//! Named sub-streams so that, e.g., re-thinning a pattern does not depend on
//! how many draws the simulation consumed.
enum class stream : std::uint64_t {
  target_field = 1,
  nuisance_field = 2,
  latent_field = 3,
  pattern = 4,
  thinning = 5,
  dummy = 6,
};

inline std::uint64_t derive_seed(std::uint64_t seed, stream s, std::uint64_t index = 0) {
  return mix_seed(mix_seed(seed ^ (static_cast<std::uint64_t>(s) * 0x632be59bd9b4e019ULL)) + index);
}

inline rng_type make_rng(std::uint64_t seed) { return rng_type(mix_seed(seed)); }

} // namespace ppcf
