#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pbev {

// splitmix64, used both as a seed mixer and as a stateless hash for
// per-pixel noise (parallel rendering must not share a sequential stream).
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// Maps a 64-bit word to [0,1). 53 mantissa bits.
inline double to_unit(uint64_t x) { return double(x >> 11) * 0x1.0p-53; }

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// that streams are identical across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    double uniform() { return to_unit(gen_()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two fresh draws per call.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double mag = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * mag * std::cos(2.0 * M_PI * u2);
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int(gen_() % span);
    }

    // Index sampled proportionally to non-negative weights.
    int pick_weighted(const double* w, int n) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += w[i];
        double x = uniform() * total;
        for (int i = 0; i < n; ++i) {
            x -= w[i];
            if (x <= 0.0) return i;
        }
        return n - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = gen_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace pbev
