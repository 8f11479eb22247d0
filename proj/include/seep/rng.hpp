#pragma once

#include <cstdint>
#include <random>

namespace seep {

// All randomness in the toolkit flows from one 64-bit seed through named
// substreams: engine_for(seed, stream, index) where `stream` identifies the
// purpose and `index` the realization/member. Distinct (stream, index) pairs
// give statistically independent engines, realizations can be generated in
// any order or in parallel, and reruns with the same seed reproduce outputs
// bitwise. Normal deviates use an explicit Box-Muller so the value sequence
// is fixed by the engine alone, not by the standard library implementation.
enum class Stream : std::uint64_t {
    LabeledFields = 1,
    VirtualFields = 2,
    TestFields = 3,
    McFields = 4,
    ParamInit = 5,
    BatchOrder = 6,
    ObsNoise = 7,
    IesPrior = 8,
    IesObsPerturb = 9,
    Reference = 10,
    SweepFields = 11,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 engine_for(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= static_cast<std::uint64_t>(stream) * 0xda942042e4dd58b5ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index * 0x2545f4914f6cdd1dULL;
    std::uint64_t c = splitmix64(s);
    return std::mt19937_64(a ^ (b << 1) ^ c);
}

class Rng {
public:
    explicit Rng(std::mt19937_64 engine) : eng_(engine) {}
    Rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0)
        : eng_(engine_for(seed, stream, index)) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased for any n.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    // Standard normal via Box-Muller (pairwise, spare cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace seep
