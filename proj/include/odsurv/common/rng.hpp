#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace odsurv {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed for an independent stream identified by (seed, counter).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t counter) {
    return splitmix64(splitmix64(seed) ^ splitmix64(counter + 0x5851F42D4C957F2DULL));
}

using Engine = std::mt19937_64;

// Uniform integer in [0, n) by rejection; portable across standard libraries,
// unlike std::uniform_int_distribution.
inline std::uint64_t uniform_below(Engine& eng, std::uint64_t n) {
    const std::uint64_t limit = Engine::max() - (Engine::max() % n + 1) % n;
    std::uint64_t r;
    do {
        r = eng();
    } while (r > limit);
    return r % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller.
inline double standard_normal(Engine& eng) {
    double u1 = uniform_unit(eng);
    while (u1 <= 0.0) u1 = uniform_unit(eng);
    const double u2 = uniform_unit(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Fisher-Yates with the portable integer draw.
template <typename T>
void portable_shuffle(std::vector<T>& v, Engine& eng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = uniform_below(eng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace odsurv
