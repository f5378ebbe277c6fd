#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace patchnet {

// Deterministic random generator. All distributions are derived by hand from
// the mt19937_64 bit stream (whose output sequence is fixed by the standard),
// so results are identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Requires n >= 1.
    size_t uniform_index(size_t n) {
        size_t i = static_cast<size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    // Standard normal via Box-Muller on the uniform stream.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * kPi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Derives an independent stream key from a base seed and a list of tags
    // (splitmix64 mixing). Used to give every (epoch, sample), bootstrap
    // resample, etc. its own reproducible stream.
    static uint64_t key(uint64_t seed, std::initializer_list<uint64_t> tags) {
        uint64_t x = mix(seed ^ 0x5851f42d4c957f2dULL);
        for (uint64_t t : tags) {
            x = mix(x ^ mix(t + 0x9e3779b97f4a7c15ULL));
        }
        return x;
    }

private:
    static constexpr double kPi = 3.14159265358979323846;

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace patchnet
