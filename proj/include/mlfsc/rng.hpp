#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mlfsc {

// All randomness in the toolkit is derived from one user seed. Each consumer
// names its stream ("init/conv4", "synth/train/3", ...) and receives an
// independent generator whose seed is splitmix64(seed ^ fnv1a(stream)).
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

using Rng = std::mt19937_64;
Rng make_rng(std::uint64_t seed, std::string_view stream);

// Portable helpers; the std:: distributions are implementation defined.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
double uniform01(Rng& rng);
double standard_normal(Rng& rng);

// First `count` entries of a seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t count);

}  // namespace mlfsc
