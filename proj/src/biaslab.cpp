#include "ubsmoe/biaslab.hpp"

#include <algorithm>
#include <cmath>

#include "ubsmoe/errors.hpp"

namespace ubsmoe::bias {

void QuadraticMoeObjective::validate() const {
    const std::size_t c_n = num_clients();
    if (c_n == 0 || num_experts == 0 || block_dim == 0)
        throw ConfigError("biaslab: empty objective");
    if (probs.size() != c_n || client_weights.size() != c_n || k_c.size() != c_n)
        throw ConfigError("biaslab: client field size mismatch");
    double wsum = 0.0;
    for (double w : client_weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("biaslab: client weights must sum to 1");
    for (std::size_t c = 0; c < c_n; ++c) {
        if (targets[c].size() != num_experts || probs[c].size() != num_experts)
            throw ConfigError("biaslab: expert field size mismatch");
        double psum = 0.0;
        for (double p : probs[c]) {
            if (p < 0.0 || p > 1.0)
                throw ConfigError("biaslab: infeasible marginals (p outside [0,1])");
            psum += p;
        }
        if (std::abs(psum - double(k_c[c])) > 1e-9)
            throw ConfigError("biaslab: infeasible marginals (row sum != K_c)");
    }
}

std::vector<double> QuadraticMoeObjective::block_grad(
    const std::vector<std::vector<double>>& theta, std::size_t client,
    std::size_t expert) const {
    std::vector<double> g(block_dim);
    for (std::size_t j = 0; j < block_dim; ++j)
        g[j] = theta[expert][j] - targets[client][expert][j];
    return g;
}

double QuadraticMoeObjective::client_value(const std::vector<std::vector<double>>& theta,
                                           std::size_t c) const {
    double v = 0.0;
    for (std::size_t i = 0; i < num_experts; ++i)
        for (std::size_t j = 0; j < block_dim; ++j) {
            const double r = theta[i][j] - targets[c][i][j];
            v += 0.5 * r * r;
        }
    return v;
}

double QuadraticMoeObjective::value(const std::vector<std::vector<double>>& theta) const {
    double v = 0.0;
    for (std::size_t c = 0; c < num_clients(); ++c)
        v += client_weights[c] * client_value(theta, c);
    return v;
}

std::vector<std::vector<double>> QuadraticMoeObjective::optimum() const {
    // weighted mean of the client targets, blockwise
    std::vector<std::vector<double>> opt(num_experts, std::vector<double>(block_dim, 0.0));
    for (std::size_t c = 0; c < num_clients(); ++c)
        for (std::size_t i = 0; i < num_experts; ++i)
            for (std::size_t j = 0; j < block_dim; ++j)
                opt[i][j] += client_weights[c] * targets[c][i][j];
    return opt;
}

QuadraticMoeObjective make_balanced_objective(std::size_t num_clients, std::size_t num_experts,
                                              std::size_t block_dim, std::size_t k,
                                              double target_scale, Rng rng) {
    if (k < 1 || k > num_experts) throw ConfigError("biaslab: k out of range");
    QuadraticMoeObjective obj;
    obj.num_experts = num_experts;
    obj.block_dim = block_dim;
    const double p = double(k) / double(num_experts);
    for (std::size_t c = 0; c < num_clients; ++c) {
        Rng cr = rng.child(c);
        std::vector<std::vector<double>> t(num_experts, std::vector<double>(block_dim));
        for (auto& blk : t)
            for (double& v : blk) v = target_scale * cr.next_normal();
        obj.targets.push_back(std::move(t));
        obj.probs.emplace_back(num_experts, p);
        obj.client_weights.push_back(1.0 / double(num_clients));
        obj.k_c.push_back(k);
    }
    obj.validate();
    return obj;
}

std::vector<std::uint8_t> sample_activation_mask(const std::vector<double>& probs, Rng& rng) {
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0 || p > 1.0)
            throw ConfigError("sample_activation_mask: p outside [0,1]");
        sum += p;
    }
    const auto k = static_cast<std::size_t>(std::llround(sum));
    if (std::abs(sum - double(k)) > 1e-9 || k == 0)
        throw ConfigError("sample_activation_mask: marginals must sum to a positive integer");

    // systematic sampling: K equally spaced pointers over the cumulative sums
    // hit each block with probability exactly p_i
    std::vector<std::uint8_t> mask(probs.size(), 0);
    const double u = rng.next_double();
    double cum = 0.0;
    std::size_t next = 0;  // next pointer index to place
    for (std::size_t i = 0; i < probs.size() && next < k; ++i) {
        const double lo = cum;
        cum += probs[i];
        const double pointer = u + double(next);
        if (pointer >= lo && pointer < cum) {
            mask[i] = 1;
            ++next;
        }
    }
    // guard against accumulated rounding at the tail
    for (std::size_t i = probs.size(); next < k && i-- > 0;) {
        if (!mask[i] && probs[i] > 0.0) {
            mask[i] = 1;
            ++next;
        }
    }
    return mask;
}

MaskedGradient sparse_grad_sample(const QuadraticMoeObjective& obj,
                                  const std::vector<std::vector<double>>& theta,
                                  std::size_t client, Rng& rng) {
    obj.validate();
    MaskedGradient out;
    out.mask = sample_activation_mask(obj.probs[client], rng);
    out.blocks.assign(obj.num_experts, std::vector<double>(obj.block_dim, 0.0));
    for (std::size_t i = 0; i < obj.num_experts; ++i)
        if (out.mask[i]) out.blocks[i] = obj.block_grad(theta, client, i);
    return out;
}

std::vector<std::vector<double>> exact_bias(const QuadraticMoeObjective& obj,
                                            const std::vector<std::vector<double>>& theta,
                                            std::size_t client) {
    std::vector<std::vector<double>> bias(obj.num_experts,
                                          std::vector<double>(obj.block_dim, 0.0));
    for (std::size_t i = 0; i < obj.num_experts; ++i) {
        const std::vector<double> g = obj.block_grad(theta, client, i);
        const double w = 1.0 - obj.probs[client][i];
        for (std::size_t j = 0; j < obj.block_dim; ++j) bias[i][j] = w * g[j];
    }
    return bias;
}

std::vector<std::vector<double>> aggregate_bias(const QuadraticMoeObjective& obj,
                                                const std::vector<std::vector<double>>& theta) {
    std::vector<std::vector<double>> agg(obj.num_experts,
                                         std::vector<double>(obj.block_dim, 0.0));
    for (std::size_t c = 0; c < obj.num_clients(); ++c) {
        const auto bc = exact_bias(obj, theta, c);
        for (std::size_t i = 0; i < obj.num_experts; ++i)
            for (std::size_t j = 0; j < obj.block_dim; ++j)
                agg[i][j] += obj.client_weights[c] * bc[i][j];
    }
    return agg;
}

double bias_norm_sq(const std::vector<std::vector<double>>& bias) {
    double s = 0.0;
    for (const auto& blk : bias)
        for (double v : blk) s += v * v;
    return s;
}

BiasReport make_bias_report(const QuadraticMoeObjective& obj,
                            const std::vector<std::vector<double>>& theta) {
    obj.validate();
    BiasReport rep;
    for (std::size_t c = 0; c < obj.num_clients(); ++c) {
        rep.client_bias_norm_sq.push_back(bias_norm_sq(exact_bias(obj, theta, c)));
        double g2_min = 1e300, g2_max = 0.0;
        for (std::size_t i = 0; i < obj.num_experts; ++i) {
            double g2 = 0.0;
            for (double v : obj.block_grad(theta, c, i)) g2 += v * v;
            g2_min = std::min(g2_min, g2);
            g2_max = std::max(g2_max, g2);
        }
        rep.lower_bounds.push_back(bias_lower_bound(g2_min, obj.num_experts, obj.k_c[c]));
        rep.upper_bounds.push_back(bias_upper_bound(g2_max, obj.num_experts, obj.k_c[c]));
    }
    rep.aggregate_bias_norm_sq = bias_norm_sq(aggregate_bias(obj, theta));
    return rep;
}

double bias_lower_bound(double g2_min, std::size_t num_experts, std::size_t k) {
    const double m = double(num_experts);
    const double frac = 1.0 - double(k) / m;
    return g2_min * m * frac * frac;
}

double bias_upper_bound(double g2_max, std::size_t num_experts, std::size_t k) {
    return g2_max * double(num_experts - k);
}

namespace {

FloorResult run_biased_sgd(const QuadraticMoeObjective& obj, std::size_t steps, Rng rng,
                           bool inject_pg, double rho) {
    obj.validate();
    if (steps < 10) throw ConfigError("biaslab: steps too small to measure a plateau");
    const std::size_t m = obj.num_experts;
    const std::size_t dim = obj.block_dim;
    std::vector<std::vector<double>> theta(m, std::vector<double>(dim, 0.0));
    const auto opt = obj.optimum();
    const double f_star = obj.value(opt);
    FloorResult res;
    res.initial_gap = obj.value(theta) - f_star;

    const std::size_t tail_start = steps - std::max<std::size_t>(steps / 10, 1);
    double tail_sum = 0.0;
    std::size_t tail_n = 0;
    double prev_gap = res.initial_gap;

    for (std::size_t t = 0; t < steps; ++t) {
        const double eta = 1.0 / std::sqrt(double(t + 1));
        std::vector<std::vector<double>> update(m, std::vector<double>(dim, 0.0));
        Rng step_rng = rng.child(t);
        for (std::size_t c = 0; c < obj.num_clients(); ++c) {
            const auto mask = sample_activation_mask(obj.probs[c], step_rng);
            for (std::size_t i = 0; i < m; ++i) {
                if (mask[i]) {
                    const auto g = obj.block_grad(theta, c, i);
                    for (std::size_t j = 0; j < dim; ++j)
                        update[i][j] += obj.client_weights[c] * g[j];
                } else if (inject_pg) {
                    // ideal pseudo-gradient: population gradient of the block
                    for (std::size_t j = 0; j < dim; ++j) {
                        double pop = 0.0;
                        for (std::size_t c2 = 0; c2 < obj.num_clients(); ++c2)
                            pop += obj.client_weights[c2] *
                                   (theta[i][j] - obj.targets[c2][i][j]);
                        update[i][j] += obj.client_weights[c] * rho * pop;
                    }
                }
            }
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dim; ++j) theta[i][j] -= eta * update[i][j];

        const double gap = obj.value(theta) - f_star;
        if (t >= tail_start) {
            tail_sum += gap;
            ++tail_n;
        }
        if (t + 1 == steps && gap > 10.0 * std::max(prev_gap, res.initial_gap))
            res.diverged = true;
        prev_gap = gap;
    }
    res.plateau_gap = tail_sum / double(tail_n);
    if (!std::isfinite(res.plateau_gap)) res.diverged = true;
    return res;
}

FloorResult run_ensemble(const QuadraticMoeObjective& obj, std::size_t steps, Rng rng,
                         bool inject_pg, double rho, std::size_t replicates) {
    if (replicates < 1) throw ConfigError("biaslab: replicates must be >= 1");
    FloorResult acc;
    for (std::size_t rep = 0; rep < replicates; ++rep) {
        FloorResult r = run_biased_sgd(obj, steps, rng.child(rep), inject_pg, rho);
        acc.plateau_gap += r.plateau_gap;
        acc.initial_gap = r.initial_gap;  // identical across replicates
        acc.diverged = acc.diverged || r.diverged;
    }
    acc.plateau_gap /= double(replicates);
    return acc;
}

}  // namespace

FloorResult run_floor_single(const QuadraticMoeObjective& obj, std::size_t steps, Rng rng,
                             std::size_t replicates) {
    FloorResult r = run_ensemble(obj, steps, rng, false, 0.0, replicates);
    r.k = obj.k_c.empty() ? 0 : obj.k_c[0];
    return r;
}

std::vector<FloorResult> run_floor_experiment(const QuadraticMoeObjective& base,
                                              const std::vector<std::size_t>& k_values,
                                              std::size_t steps, Rng rng,
                                              std::size_t replicates) {
    std::vector<FloorResult> out;
    for (std::size_t k : k_values) {
        QuadraticMoeObjective obj = base;
        const double p = double(k) / double(obj.num_experts);
        for (std::size_t c = 0; c < obj.num_clients(); ++c) {
            obj.probs[c].assign(obj.num_experts, p);
            obj.k_c[c] = k;
        }
        FloorResult r = run_ensemble(obj, steps, rng, false, 0.0, replicates);
        r.k = k;
        out.push_back(r);
    }
    return out;
}

PgFloorResult pg_floor_comparison(const QuadraticMoeObjective& obj, std::size_t steps,
                                  double rho, Rng rng, std::size_t replicates) {
    PgFloorResult res;
    res.naive_gap = run_ensemble(obj, steps, rng, false, 0.0, replicates).plateau_gap;
    res.pg_gap = run_ensemble(obj, steps, rng, true, rho, replicates).plateau_gap;
    return res;
}

}  // namespace ubsmoe::bias
