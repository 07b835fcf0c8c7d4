#pragma once

#include <cstdint>
#include <vector>

namespace robsal {

// Deterministic random source. Wraps a 64-bit xoshiro-style generator and
// implements the distributions by hand so that streams are identical across
// standard libraries and platforms (std:: distributions are not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform();

    // Uniform on [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (no state caching, two draws per value).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n);

    int range_int(int lo, int hi);  // inclusive bounds

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream; mixing is splitmix64-based so any
    // (seed, key...) tuple gives a reproducible child stream.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t key);
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2);
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2,
                                std::uint64_t k3);

private:
    std::uint64_t s_[4];
};

}  // namespace robsal
