#pragma once

#include <cstdint>
#include <cmath>

namespace cadenza {

// PCG32 with an explicit stream id. Every stochastic operation in the
// project takes one of these (or a seed to construct one); nothing reads
// global state.
class Pcg32 {
public:
    Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}
    Pcg32(uint64_t seed, uint64_t stream = 1) { reseed(seed, stream); }

    void reseed(uint64_t seed, uint64_t stream = 1) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
        have_gauss_ = false;
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
    }

    // [0, bound)
    uint32_t next_below(uint32_t bound) {
        uint32_t threshold = (-bound) % bound;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // [0, 1)
    double uniform() {
        return next_u32() * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; caches the second draw for determinism independent of
    // the standard library.
    double normal() {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 1e-12);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        gauss_ = r * std::sin(theta);
        have_gauss_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
    bool have_gauss_ = false;
    double gauss_ = 0.0;
};

} // namespace cadenza
