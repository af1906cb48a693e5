#ifndef GAZESEG_SEEDS_HPP
#define GAZESEG_SEEDS_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace gazeseg {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Named sub-seed of a root seed. Stages draw from their own stream so
/// adding randomness to one stage never perturbs another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);
std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t index);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace gazeseg

#endif
