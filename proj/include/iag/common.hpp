#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace iag {

// Thrown when inputs, shapes, or configs violate a precondition.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation goes wrong at runtime (non-finite values,
// consumed graphs, I/O failures).
class runtime_fault : public std::runtime_error {
public:
    explicit runtime_fault(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw validation_error(msg);
}

// splitmix64: used to derive independent sub-seeds from (master seed, index)
// so per-sample work is order-independent and reproducible.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ (0xa076'1d64'78bd'642fULL * (stream + 1))) + index);
}

// Stable string hash for seeding per-record RNGs from ids.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(splitmix64(seed ^ 0x12d6'87f3'9ad1'55c7ULL)); }

}  // namespace iag
