#pragma once
// Seed derivation helpers; every random stream in the library starts here.

#include <cstdint>
#include <string_view>

namespace scatgate {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent child seed for stream `a` of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) { return splitmix64(seed ^ splitmix64(a)); }

/// FNV-1a, for keying random draws by an id string.
inline std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

}  // namespace scatgate
