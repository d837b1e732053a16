#pragma once

// Empirical laboratory for the sparse-gradient bias analysis: a
// block-separable quadratic objective with prescribed per-client activation
// marginals, closed-form bias, the sandwich bounds on its norm, and
// plateau-gap experiments for biased SGD.

#include <cstddef>
#include <vector>

#include "ubsmoe/rng.hpp"

namespace ubsmoe::bias {

// F_c(theta) = 0.5 * sum_i ||theta_i - target_{c,i}||^2, block-separable,
// PL with mu = 1. Activation probabilities p_{c,i} must lie in [0,1] with
// row sums equal to the client's sparsity K_c.
struct QuadraticMoeObjective {
    std::size_t num_experts = 4;
    std::size_t block_dim = 2;
    std::vector<std::vector<std::vector<double>>> targets;  // [client][expert][dim]
    std::vector<std::vector<double>> probs;                 // [client][expert]
    std::vector<double> client_weights;                     // sums to 1
    std::vector<std::size_t> k_c;                           // per-client sparsity

    std::size_t num_clients() const { return targets.size(); }
    void validate() const;

    // gradient of F_c at theta for one block
    std::vector<double> block_grad(const std::vector<std::vector<double>>& theta,
                                   std::size_t client, std::size_t expert) const;
    double value(const std::vector<std::vector<double>>& theta) const;        // F(theta)
    double client_value(const std::vector<std::vector<double>>& theta, std::size_t c) const;
    std::vector<std::vector<double>> optimum() const;                         // argmin F
};

// Uniform-balanced instance: p_{c,i} = K/M for every client, equal weights,
// targets drawn from the stream.
QuadraticMoeObjective make_balanced_objective(std::size_t num_clients, std::size_t num_experts,
                                              std::size_t block_dim, std::size_t k,
                                              double target_scale, Rng rng);

// Fixed-size activation sampling with exact inclusion marginals
// (systematic / conditional-Poisson style). probs entries in [0,1], summing
// to an integer k; returns a 0/1 mask with exactly k ones.
std::vector<std::uint8_t> sample_activation_mask(const std::vector<double>& probs, Rng& rng);

struct MaskedGradient {
    std::vector<std::vector<double>> blocks;  // zero on non-drawn blocks
    std::vector<std::uint8_t> mask;
};

MaskedGradient sparse_grad_sample(const QuadraticMoeObjective& obj,
                                  const std::vector<std::vector<double>>& theta,
                                  std::size_t client, Rng& rng);

// Closed form: B_{c,i} = (1 - p_{c,i}) * grad_i F_c (exact here because the
// objective is block-separable).
std::vector<std::vector<double>> exact_bias(const QuadraticMoeObjective& obj,
                                            const std::vector<std::vector<double>>& theta,
                                            std::size_t client);

// Weight-averaged bias across clients, sum_c w_c * B_c, per block.
std::vector<std::vector<double>> aggregate_bias(const QuadraticMoeObjective& obj,
                                                const std::vector<std::vector<double>>& theta);

double bias_norm_sq(const std::vector<std::vector<double>>& bias);

// Sandwich bounds on ||B_c||^2 given the extreme block gradient norms.
double bias_lower_bound(double g2_min, std::size_t num_experts, std::size_t k);
double bias_upper_bound(double g2_max, std::size_t num_experts, std::size_t k);

struct BiasReport {
    std::vector<double> client_bias_norm_sq;  // ||B_c||^2 per client
    double aggregate_bias_norm_sq = 0.0;      // ||sum_c w_c B_c||^2
    std::vector<double> lower_bounds;         // per client
    std::vector<double> upper_bounds;         // per client
    double plateau_gap = 0.0;                 // measured SGD floor, if run
};

// Closed-form bias norms and sandwich bounds at theta; plateau_gap is left
// for the caller's floor experiment.
BiasReport make_bias_report(const QuadraticMoeObjective& obj,
                            const std::vector<std::vector<double>>& theta);

struct FloorResult {
    std::size_t k = 0;
    double plateau_gap = 0.0;   // mean of F - F* over the last 10% of steps,
                                // averaged over the replicate trajectories
    double initial_gap = 0.0;
    bool diverged = false;
};

// Biased SGD with eta_t = 1 / sqrt(t + 1) on a balanced instance per K. The
// plateau gap is ensemble-averaged over `replicates` independent mask
// streams to keep the estimator noise well below the floor separation.
std::vector<FloorResult> run_floor_experiment(const QuadraticMoeObjective& base,
                                              const std::vector<std::size_t>& k_values,
                                              std::size_t steps, Rng rng,
                                              std::size_t replicates = 32);

// Single-K run with a caller-supplied probability matrix (for imbalance
// studies); uses the objective's own probs and k_c.
FloorResult run_floor_single(const QuadraticMoeObjective& obj, std::size_t steps, Rng rng,
                             std::size_t replicates = 32);

struct PgFloorResult {
    double naive_gap = 0.0;
    double pg_gap = 0.0;
};

// Same run twice: dead blocks receive zeros (naive) vs rho * the population
// gradient of the dead block (ideal pseudo-gradient).
PgFloorResult pg_floor_comparison(const QuadraticMoeObjective& obj, std::size_t steps,
                                  double rho, Rng rng, std::size_t replicates = 32);

}  // namespace ubsmoe::bias
