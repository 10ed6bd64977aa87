#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace mtnav {

/// Counter-based generator: draw k is splitmix64(seed + k·γ), so a (seed, counter)
/// pair fully determines the stream on every platform.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return mix(seed_ + (++counter_) * kGamma); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::size_t below(std::size_t n) {
        const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::size_t>(wide >> 64);
    }

    /// Independent stream derived from this stream's seed and a label.
    RngStream fork(std::uint64_t label) const { return RngStream(mix(seed_ ^ mix(label + kGamma))); }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace mtnav
