#pragma once

// Utilization-balance and routing-diagnostic metrics.

#include <cstddef>
#include <span>
#include <vector>

namespace ubsmoe {

// -sum u_i ln u_i with 0 ln 0 := 0, computed on the raw rates (no
// renormalization). Entries must be nonnegative.
double utilization_entropy(std::span<const double> u);

// Exact double-sum Gini: sum_ij |u_i - u_j| / (2 M sum_i u_i).
// Entries must be nonnegative with a positive sum.
double gini(std::span<const double> u);

// Product-moment correlation; throws NumericError when either variance is
// zero (undefined, never silently 0).
double pearson(std::span<const double> x, std::span<const double> y);

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<double> loss_by_tier;       // mean task loss per budget tier
    double loss_weighted_mean = 0.0;        // p_c-weighted mean over participants
    std::vector<double> entropy_per_layer;  // H(u~) per layer
    double entropy_mean = 0.0;
    std::vector<double> gini_per_layer;
    double gini_mean = 0.0;
    double pearson_phi_util = 0.0;          // NaN when undefined
    std::vector<double> flops_per_client;   // analytic per-round cost
};

}  // namespace ubsmoe
