#include "ubsmoe/rng.hpp"

#include <cmath>
#include <numbers>

#include "ubsmoe/errors.hpp"

namespace ubsmoe {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(mix(seed + kGolden)) {}

Rng Rng::child(std::uint64_t tag) const {
    Rng c(0);
    c.state_ = mix(state_ ^ mix(tag + 0x632BE59BD9B4E019ull));
    return c;
}

std::uint64_t Rng::next_u64() {
    state_ += kGolden;
    return mix(state_);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
}

double Rng::next_normal() {
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::next_gamma(double shape) {
    if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
    if (shape < 1.0) {
        double u = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = next_normal();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = next_double();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> Rng::next_dirichlet(double alpha, std::size_t n) {
    if (!(alpha > 0.0)) throw ConfigError("dirichlet concentration must be positive");
    if (n == 0) throw ConfigError("dirichlet dimension must be >= 1");
    std::vector<double> w(n);
    for (;;) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = next_gamma(alpha);
            sum += w[i];
        }
        if (sum > 0.0) {
            for (double& v : w) v /= sum;
            return w;
        }
        // all gamma draws underflowed to zero; retry
    }
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
    if (bound == 0) throw ConfigError("next_below: bound must be >= 1");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    for (;;) {
        std::uint64_t v = next_u64();
        if (v < limit) return v % bound;
    }
}

}  // namespace ubsmoe
