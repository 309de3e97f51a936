#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace text2loc {

/*
 * Seeded random source. Only the raw 64-bit engine output is taken from
 * the standard library; the derived distributions are computed here so
 * that generated data is identical across standard library vendors.
 */
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(mix(seed)) { }

    /* Independent stream for (seed, stream) without sharing state */
    static Rng derive(std::uint64_t seed, std::uint64_t stream)
    {
        return Rng(mix(seed) ^ mix(stream + 0x9e3779b97f4a7c15ULL));
    }

    std::uint64_t next() { return engine_(); }

    /* uniform in [0, 1) with 53 random bits */
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /* uniform integer in [0, n), rejection sampled */
    std::uint64_t index(std::uint64_t n);

    /* Box-Muller, one variate per call */
    double normal(double mean, double stddev);

    template <typename RandomIt>
    void shuffle(RandomIt first, RandomIt last)
    {
        const auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            const auto j = static_cast<decltype(i)>(
                index(static_cast<std::uint64_t>(i) + 1));
            using std::swap;
            swap(first[i], first[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t x)
    {
        /* splitmix64 finalizer */
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

} // namespace text2loc
