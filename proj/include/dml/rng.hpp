#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dml {

// Deterministic counter-free RNG. Every consumer derives its own stream from
// (seed, stream id), so reordering one consumer never shifts another's draws.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        state_ = splitmix(seed * 0x9e3779b97f4a7c15ULL + stream);
        if (state_ == 0) state_ = 0x106689d45497fdb5ULL;
    }

    uint64_t next_u64() {
        // xorshift64*
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545f4914f6cdd1dULL;
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, no cached spare (keeps streams splittable)
    double normal(double mean = 0.0, double std = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + std * z;
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    uint64_t state_;
};

}  // namespace dml
