#pragma once

// Splittable counter-based pseudo-random generator. Identical seeds produce
// identical streams on every platform (pure 64-bit integer arithmetic), and
// child streams derived from the same (parent, tag) pair are identical, so
// each (round, client, step) tuple owns an independent reproducible stream.

#include <cstdint>
#include <vector>

namespace ubsmoe {

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Derives an independent child stream. Does not advance this stream.
    Rng child(std::uint64_t tag) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double next_double();
    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi);
    // Standard normal via Box-Muller (no caching, fixed consumption).
    double next_normal();
    // Gamma(shape, 1), shape > 0, Marsaglia-Tsang with the shape<1 boost.
    double next_gamma(double shape);
    // Symmetric Dirichlet of dimension n with concentration alpha.
    std::vector<double> next_dirichlet(double alpha, std::size_t n);
    // Uniform integer in [0, bound), bound >= 1, rejection-sampled.
    std::uint64_t next_below(std::uint64_t bound);

private:
    std::uint64_t state_;
};

}  // namespace ubsmoe
