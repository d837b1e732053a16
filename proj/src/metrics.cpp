#include "ubsmoe/metrics.hpp"

#include <cmath>

#include "ubsmoe/errors.hpp"

namespace ubsmoe {

double utilization_entropy(std::span<const double> u) {
    double h = 0.0;
    for (double v : u) {
        if (v < 0.0) throw ConfigError("utilization_entropy: negative rate");
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

double gini(std::span<const double> u) {
    const std::size_t m = u.size();
    if (m == 0) throw ConfigError("gini: empty input");
    double sum = 0.0;
    for (double v : u) {
        if (v < 0.0) throw ConfigError("gini: negative rate");
        sum += v;
    }
    if (!(sum > 0.0)) throw ConfigError("gini: all-zero rates");
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) acc += std::abs(u[i] - u[j]);
    return acc / (2.0 * static_cast<double>(m) * sum);
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("pearson: need equal lengths >= 2");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0))
        throw NumericError("pearson: undefined for zero variance");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace ubsmoe
