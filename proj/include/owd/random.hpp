#pragma once

#include <cstdint>

namespace owd {

/// SplitMix64 stream. Chosen over <random> engines so that every draw is
/// reproducible bit-for-bit from other languages.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi]; modulo bias is irrelevant at these ranges.
    std::int64_t integer(std::int64_t lo, std::int64_t hi)
    {
        return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
    }

private:
    std::uint64_t state_;
};

/// Seed of the i-th independent sub-stream derived from `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t i)
{
    SplitMix64 g(seed ^ (0xD1B54A32D192ED03ull * (i + 1)));
    return g.next();
}

} // namespace owd
