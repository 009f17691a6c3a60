#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ipoe {

// FNV-1a. Stable across platforms and runs, which is what guideline ids,
// cache keys, and trace digests need. Not cryptographic.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL) {
    std::uint64_t h = basis;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

// 16 hex chars; used for guideline ids and short digests.
inline std::string digest64(std::string_view data) {
    return hex64(fnv1a64(data));
}

// Two independent FNV passes, 32 hex chars; used for cache keys where
// accidental collisions must be negligible.
inline std::string digest128(std::string_view data) {
    const std::uint64_t a = fnv1a64(data);
    const std::uint64_t b = fnv1a64(data, 0x6c62272e07bb0142ULL);
    return hex64(a) + hex64(b);
}

}  // namespace ipoe
