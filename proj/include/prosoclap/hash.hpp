#pragma once

#include <cstdint>
#include <string_view>

namespace prosoclap {

// 64-bit FNV-1a; stable across platforms and runs.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 1469598103934665603ULL) {
    std::uint64_t h = seed;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace prosoclap
