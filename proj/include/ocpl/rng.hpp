#pragma once

#include <cstdint>
#include <random>

namespace ocpl {

// splitmix64 finalizer. Stream seeds for classes, stages and grid cells are
// derived as splitmix64(seed ^ splitmix64(salt)) so that streams with nearby
// salts are decorrelated.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t salt = 0) {
    return std::mt19937_64(mix_seed(seed, salt));
}

}  // namespace ocpl
