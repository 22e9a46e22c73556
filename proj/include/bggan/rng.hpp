#pragma once

#include <cstdint>
#include <random>

namespace bggan {

/// splitmix64 finalizer; used to derive independent seeds from one root seed
/// so that per-subject / per-module streams do not overlap.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t salt = 0) {
    return std::mt19937_64(mix_seed(seed, salt));
}

}  // namespace bggan
