// Counter-based random numbers: every draw is a pure function of
// (seed, stream, index), so generation order never changes the output.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dcav::rng {

inline constexpr std::uint64_t mix64(std::uint64_t x)
{
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL))) {}

    std::uint64_t bits(std::uint64_t index, std::uint64_t lane = 0) const
    {
        return mix64(key_ ^ mix64(index * 2 + lane));
    }

    /// Uniform in the open interval (0, 1).
    double uniform(std::uint64_t index, std::uint64_t lane = 0) const
    {
        return (static_cast<double>(bits(index, lane) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two lanes of the same counter.
    double normal(std::uint64_t index) const
    {
        const double u1 = uniform(index, 0);
        const double u2 = uniform(index, 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
};

}  // namespace dcav::rng
