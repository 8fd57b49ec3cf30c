#ifndef BCDIFF_RANDOM_HPP
#define BCDIFF_RANDOM_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "bcdiff/core.hpp"

namespace bcdiff {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Derives a named substream seed from a master seed. Used to give every
// utterance / worker / pipeline stage its own independent, reproducible
// stream: derive_seed(master, "train.batch") etc.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return splitmix64(master ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 0x9E3779B97F4A7C15ULL));
}

// Seeded random stream. Scalar conversions are done by hand (instead of the
// std distributions, whose output is implementation-defined) so that a seed
// produces the same sequence under every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        require(n > 0, "Rng::uniform_int: n must be positive");
        // Rejection sampling keeps the draw exactly uniform.
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return static_cast<std::int64_t>(v % un);
    }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Circularly-symmetric complex normal with unit total variance:
    // real and imaginary parts are independent N(0, 1/2).
    std::complex<double> complex_normal() {
        const double s = std::numbers::sqrt2 / 2.0;
        const double re = normal() * s;
        const double im = normal() * s;
        return {re, im};
    }

    // Independent child stream; does not advance this stream.
    Rng fork(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
    Rng fork(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bcdiff

#endif  // BCDIFF_RANDOM_HPP
