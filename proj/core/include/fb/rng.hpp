#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fb {

// splitmix64 finalizer; used to spread seeds before feeding mt19937.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives an independent stream from a base seed and a purpose tag, so the
// same base seed gives unrelated randomness to each pipeline stage.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return mix64(base ^ mix64(h) ^ mix64(index * 0x9e3779b97f4a7c15ull + 1));
}

inline std::mt19937 make_rng(uint64_t base, std::string_view tag, uint64_t index = 0) {
    return std::mt19937(static_cast<uint32_t>(derive_seed(base, tag, index) >> 16));
}

}  // namespace fb
