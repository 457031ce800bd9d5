#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "efd/common.hpp"

namespace efd {

// PCG32 with Box-Muller gaussians. std::mt19937 + std distributions are
// implementation-defined across library versions; checkpoint resume and the
// determinism tests need a generator whose byte-for-byte sequence we own.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed, std::uint64_t seq = 0xda3e39cb94b95bdbULL) {
        state_ = 0;
        inc_ = (seq << 1u) | 1u;
        next_u32();
        state_ += splitmix(seed);
        next_u32();
    }

    // Named substream: all project randomness flows from one seed through
    // substreams ("init", "data", "sim", ...).
    static Rng substream(std::uint64_t seed, std::string_view name) {
        std::uint64_t h = fnv1a64(name);
        return Rng(seed ^ h, h | 1u);
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // Uniform in [0, 1).
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint32_t uniform_int(std::uint32_t n) {
        // Lemire-style rejection to kill modulo bias.
        std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * n;
        std::uint32_t lo = static_cast<std::uint32_t>(m);
        if (lo < n) {
            std::uint32_t t = (0u - n) % n;
            while (lo < t) {
                m = static_cast<std::uint64_t>(next_u32()) * n;
                lo = static_cast<std::uint32_t>(m);
            }
        }
        return static_cast<std::uint32_t>(m >> 32);
    }

    double gaussian() {
        // Box-Muller, cosine branch only: one value per two uniforms keeps the
        // stream stateless and therefore trivially serializable.
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(static_cast<std::uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Serializable state (checkpoint resume).
    std::uint64_t state() const { return state_; }
    std::uint64_t inc() const { return inc_; }
    void restore(std::uint64_t state, std::uint64_t inc) {
        state_ = state;
        inc_ = inc;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
};

}  // namespace efd
