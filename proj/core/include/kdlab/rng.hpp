#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace kdlab {

// Deterministic RNG with a fixed cross-platform algorithm (splitmix64).
// std::mt19937 is portable but the standard distributions are not, so all
// derived draws (uniform, normal, categorical) are implemented here.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller; the sine branch is discarded to keep the stream stateless.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) {
            throw std::invalid_argument("Rng::below: n must be positive");
        }
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // Inverse-CDF draw from an (approximately normalized) categorical.
    int categorical(std::span<const double> probs) {
        if (probs.empty()) {
            throw std::invalid_argument("Rng::categorical: empty distribution");
        }
        const double u = uniform01();
        double cum = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) {
                return static_cast<int>(i);
            }
        }
        return static_cast<int>(probs.size() - 1);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    uint64_t state_;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ull;
    }
    return h;
}

// Named seed streams: every consumer of randomness derives its own stream so
// that, e.g., adding Monte-Carlo samples never perturbs training draws.
inline Rng derive_stream(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
    uint64_t h = fnv1a64(purpose);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return Rng(h);
}

}  // namespace kdlab
