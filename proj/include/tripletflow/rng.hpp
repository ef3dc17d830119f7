#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace tripletflow {

// splitmix64 step: advances the state and returns a mixed 64-bit value
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic sub-stream seed for (base seed, role/index) pairs. Used so
// trials, folds and dropout streams are independent of execution order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t s = base + (index + 1) * 0x9E3779B97F4A7C15ULL;
    return splitmix64(s);
}

// xoshiro256** with splitmix64 seed expansion. Fixed algorithm (not
// std::mt19937) so that identical seeds give identical streams on every
// platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        for (auto& word : state_) word = splitmix64(seed);
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

    // uniform in [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0,n); n must be nonzero
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t min = (0 - n) % n; // 2^64 mod n
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x < min);
        return x % n;
    }

    // standard normal via Box-Muller; the sine branch is discarded so one
    // draw always consumes exactly two uniforms
    double normal() {
        const double u1 = 1.0 - uniform(); // (0,1], keeps the log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace tripletflow
