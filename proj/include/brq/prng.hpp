#pragma once

// Deterministic PRNG used everywhere the project needs randomness.
// xoshiro256** with splitmix64 seed expansion; Gaussian draws via Box-Muller
// on 53-bit uniforms with both values of a pair produced at once (the second
// is cached for the next call). Identical seeds give identical streams on any
// platform with IEEE-754 doubles. Independent sub-streams come from
// derive_seed(base, purpose).

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace brq {

inline constexpr std::uint64_t kSplitmix64Gamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += kSplitmix64Gamma);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// One splitmix64 output, treating x as the pre-increment state.
constexpr std::uint64_t mix64(std::uint64_t x) {
    return splitmix64_next(x);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Sub-seed for an independent per-purpose stream.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return mix64(base ^ mix64(tag));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
    return derive_seed(base, fnv1a64(purpose));
}

class PrngState {
public:
    explicit PrngState(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64_next(sm);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // 53-bit uniform in [0, 1).
    double uniform53() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1): a zero draw is rejected and redrawn.
    double uniform_open01() {
        double u = uniform53();
        while (u == 0.0) {
            u = uniform53();
        }
        return u;
    }

    // Uniform on the open interval (lo, hi).
    double uniform_open(double lo, double hi) {
        return lo + (hi - lo) * uniform_open01();
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform53();
        const double u2 = uniform53();
        const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
        const double angle = kTwoPi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double gaussian(double mean, double stddev) {
        return mean + stddev * gaussian();
    }

    bool bernoulli(double p) {
        return uniform53() < p;
    }

    // Integer in [0, bound) via 128-bit multiply-shift.
    std::uint64_t next_below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

private:
    static constexpr double kTwoPi = 6.283185307179586476925286766559;

    static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace brq
