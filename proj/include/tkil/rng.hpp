#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tkil {

// FNV-1a 64-bit; stable content hash for seed derivation and fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// splitmix64 finalizer; used to derive independent stream seeds from
// (base seed, stream tag, step) without correlated low bits.
inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z += b + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z += c + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 31)) * 0xbf58476d1ce4e5b9ull;
    return z ^ (z >> 33);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

inline double rand_gauss(std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(rng);
}

inline double rand_uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline int64_t rand_index(std::mt19937_64& rng, int64_t n) {
    std::uniform_int_distribution<int64_t> d(0, n - 1);
    return d(rng);
}

template <class T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        std::uniform_int_distribution<size_t> d(0, i - 1);
        std::swap(v[i - 1], v[d(rng)]);
    }
}

// k distinct indices from [0, n), order randomized, deterministic under rng.
inline std::vector<int64_t> sample_without_replacement(std::mt19937_64& rng, int64_t n, int64_t k) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    shuffle_vec(idx, rng);
    idx.resize(static_cast<size_t>(k < n ? k : n));
    return idx;
}

} // namespace tkil
