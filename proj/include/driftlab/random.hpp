#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace driftlab::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

/// Philox4x32-10 block function.
inline Counter philox4x32(Counter ctr, Key key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

inline double to_open_unit(std::uint32_t x) { return (static_cast<double>(x) + 0.5) * 0x1p-32; }

/// Four standard normals for the counter (seed; a, b, c, block).
inline std::array<double, 4> normals4(std::uint64_t seed, std::uint64_t a, std::uint32_t b, std::uint32_t block) {
    const Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    const Counter out = philox4x32({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, block}, key);
    std::array<double, 4> z{};
    for (int k = 0; k < 2; ++k) {
        const double r = std::sqrt(-2.0 * std::log(to_open_unit(out[static_cast<std::size_t>(2 * k)])));
        const double th = 2.0 * std::numbers::pi * to_open_unit(out[static_cast<std::size_t>(2 * k + 1)]);
        z[static_cast<std::size_t>(2 * k)] = r * std::cos(th);
        z[static_cast<std::size_t>(2 * k + 1)] = r * std::sin(th);
    }
    return z;
}

/// Fills z[0..n) with normals keyed by (seed, a, b).
inline void normals(std::uint64_t seed, std::uint64_t a, std::uint32_t b, double* z, int n) {
    for (int blk = 0; 4 * blk < n; ++blk) {
        const auto four = normals4(seed, a, b, static_cast<std::uint32_t>(blk));
        for (int k = 0; k < 4 && 4 * blk + k < n; ++k) z[4 * blk + k] = four[static_cast<std::size_t>(k)];
    }
}

/// Uniform in (0, 1) keyed by (seed, a, b, block).
inline double uniform(std::uint64_t seed, std::uint64_t a, std::uint32_t b, std::uint32_t block = 0) {
    const Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    const Counter out = philox4x32({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, block}, key);
    return to_open_unit(out[0]);
}

/// Derives an independent child seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace driftlab::rng
