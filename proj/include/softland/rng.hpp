#pragma once

// Deterministic seed derivation so that campaign results are reproducible
// regardless of worker scheduling: every consumer of randomness gets its own
// generator seeded from (master seed, purpose, indices).

#include <cstdint>
#include <initializer_list>
#include <random>

namespace softland {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Hash a master seed with a path of integers (purpose tag, relay index,
/// repetition index, operation index, ...) into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t v : path) {
        s = splitmix64(s ^ (v + 0x9e3779b97f4a7c15ULL));
    }
    return s;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace softland
