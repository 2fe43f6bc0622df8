#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace tab2img {

// Seeded random source with hand-rolled distributions. std::mt19937_64 output
// is pinned by the standard, but the std distributions are not, so uniform,
// normal and shuffle are implemented here to keep streams identical across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is negligible for the small n
    // used here (populations, record counts).
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(engine_() % n);
    }

    // Box-Muller without caching so each call consumes a fixed amount of state.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(2.0 * std::numbers::pi * u2);
        return mean + stddev * z;
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace tab2img
