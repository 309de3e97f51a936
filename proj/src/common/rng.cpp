#include "text2loc/common/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace text2loc {

std::uint64_t Rng::index(std::uint64_t n)
{
    if (n <= 1)
        return 0;

    /* Reject the biased tail of the 64-bit range */
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit)
        x = engine_();
    return x % n;
}

double Rng::normal(double mean, double stddev)
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace text2loc
