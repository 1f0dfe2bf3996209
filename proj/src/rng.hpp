#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace starid {

// SplitMix64 (Steele/Lea/Burks finalizer constants). Chosen over the <random>
// engines because its output is fully specified: the same seed produces the
// same stream on every platform and standard library, which the scene and
// benchmark formats depend on.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Modulo bias is < 2^-53 for any n this project uses.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>(uniform() * static_cast<double>(n));
    }

    // Standard normal via Box-Muller. The spare is cached so a pair of draws
    // costs one log/sqrt; the cache makes draw order part of the contract.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Derives an independent stream from (seed, stream). Used to give every
// simulated frame its own generator so frames can be regenerated in isolation.
inline uint64_t derive_stream(uint64_t seed, uint64_t stream) {
    Rng mixer(seed ^ (0xA0761D6478BD642Full + stream * 0xE7037ED1A0B428DBull));
    mixer.next_u64();
    return mixer.next_u64();
}

}  // namespace starid
