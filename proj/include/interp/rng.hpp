#pragma once

#include <cstdint>
#include <string_view>

namespace interp {

/// FNV-1a, 64-bit.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t hash = 14695981039346656037ull;
    for (char c : bytes) {
        hash ^= static_cast<std::uint8_t>(c);
        hash *= 1099511628211ull;
    }
    return hash;
}

/// PCG32 (XSH-RR 64/32) with the standard LCG multiplier and default increment,
/// seeded the way pcg-cpp seeds a default-stream engine.
class Pcg32 {
public:
    static constexpr std::uint64_t kMultiplier = 6364136223846793005ull;
    static constexpr std::uint64_t kIncrement = 1442695040888963407ull;

    constexpr explicit Pcg32(std::uint64_t seed) noexcept : state_(bump(seed + kIncrement)) {}

    constexpr std::uint32_t next() noexcept {
        const std::uint64_t old = state_;
        state_ = bump(state_);
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    /// Uniform float in [-0.1, 0.1) from the top 24 bits of one draw.
    float next_weight() noexcept {
        const double unit = static_cast<double>(next() >> 8) / 16777216.0;
        return static_cast<float>(unit * 0.2 - 0.1);
    }

private:
    static constexpr std::uint64_t bump(std::uint64_t s) noexcept { return s * kMultiplier + kIncrement; }

    std::uint64_t state_;
};

}  // namespace interp
