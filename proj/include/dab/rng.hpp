#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dab {

// Distribution helpers on top of mt19937. The standard <random>
// distributions are implementation-defined, so results would differ across
// standard libraries; these stay bit-identical everywhere.

inline std::uint32_t uniform_u32(std::mt19937& g, std::uint32_t bound) {
    // Lemire multiply-shift with rejection, unbiased for any bound > 0.
    std::uint64_t m = std::uint64_t(g()) * bound;
    auto lo = static_cast<std::uint32_t>(m);
    if (lo < bound) {
        std::uint32_t t = (0u - bound) % bound;
        while (lo < t) {
            m = std::uint64_t(g()) * bound;
            lo = static_cast<std::uint32_t>(m);
        }
    }
    return static_cast<std::uint32_t>(m >> 32);
}

inline float uniform_float(std::mt19937& g, float lo, float hi) {
    float u = static_cast<float>(g() >> 8) * 0x1.0p-24f; // [0, 1)
    return lo + (hi - lo) * u;
}

inline float normal_float(std::mt19937& g, float mean = 0.0f,
                          float stddev = 1.0f) {
    float u1, u2;
    do {
        u1 = static_cast<float>(g() >> 8) * 0x1.0p-24f;
    } while (u1 <= 0.0f);
    u2 = static_cast<float>(g() >> 8) * 0x1.0p-24f;
    float r = std::sqrt(-2.0f * std::log(u1));
    return mean + stddev * r * std::cos(6.28318530717958647692f * u2);
}

} // namespace dab
