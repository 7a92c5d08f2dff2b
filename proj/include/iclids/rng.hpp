#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace iclids {

// Self-contained splitmix64 generator. The standard <random> distributions are
// implementation-defined, which breaks bit-stable reproducibility guarantees,
// so every random draw in the project goes through this class.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) via rejection sampling.
    uint64_t below(uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    int range_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller with cached spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent derived stream; does not advance this generator.
    Rng fork(uint64_t salt) const { return Rng(mix(state_, salt)); }

    // One round of splitmix-style avalanche over two words; used project-wide
    // for seed derivation (per-member, per-trial, per-iteration streams).
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t mix(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }

  private:
    uint64_t state_;
    double spare_{0.0};
    bool has_spare_{false};
};

// Order-sensitive hash of a double vector (bit patterns, not values), used to
// derive deterministic per-record streams.
inline uint64_t hash_doubles(const std::vector<double>& v, uint64_t seed) {
    uint64_t h = seed ^ 0x51'7c'c1'b7'27'22'0a'95ULL;
    for (const double x : v) {
        uint64_t bits = 0;
        std::memcpy(&bits, &x, sizeof(bits));
        h = Rng::mix(h, bits);
    }
    return h;
}

}  // namespace iclids
