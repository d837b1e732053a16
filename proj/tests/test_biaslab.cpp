#include <doctest.h>

#include <cmath>

#include "ubsmoe/biaslab.hpp"
#include "ubsmoe/errors.hpp"

using namespace ubsmoe;
using namespace ubsmoe::bias;

namespace {

// random feasible marginals: start balanced, apply mass-preserving transfers
std::vector<double> random_feasible_probs(std::size_t m, std::size_t k, Rng& rng) {
    std::vector<double> p(m, double(k) / double(m));
    for (int t = 0; t < 50; ++t) {
        const std::size_t i = rng.next_below(m);
        const std::size_t j = rng.next_below(m);
        if (i == j) continue;
        const double room = std::min(1.0 - p[i], p[j]);
        const double delta = room * rng.next_double();
        p[i] += delta;
        p[j] -= delta;
    }
    return p;
}

QuadraticMoeObjective single_client_objective(std::size_t m, std::size_t dim,
                                              const std::vector<double>& probs, std::size_t k,
                                              Rng& rng) {
    QuadraticMoeObjective obj;
    obj.num_experts = m;
    obj.block_dim = dim;
    std::vector<std::vector<double>> t(m, std::vector<double>(dim));
    for (auto& blk : t)
        for (double& v : blk) v = rng.next_normal();
    obj.targets.push_back(std::move(t));
    obj.probs.push_back(probs);
    obj.client_weights.push_back(1.0);
    obj.k_c.push_back(k);
    obj.validate();
    return obj;
}

}  // namespace

TEST_CASE("activation masks have exact size and honor deterministic marginals") {
    Rng rng(1);
    // p in {0,1}: deterministic mask
    std::vector<double> det{1.0, 0.0, 1.0, 0.0};
    for (int t = 0; t < 10; ++t) {
        auto mask = sample_activation_mask(det, rng);
        CHECK(mask == std::vector<std::uint8_t>{1, 0, 1, 0});
    }
    // every draw has exactly k ones
    std::vector<double> p{0.9, 0.3, 0.5, 0.3};
    for (int t = 0; t < 200; ++t) {
        auto mask = sample_activation_mask(p, rng);
        int ones = 0;
        for (auto v : mask) ones += v;
        CHECK(ones == 2);
    }
    CHECK_THROWS_AS(sample_activation_mask(std::vector<double>{0.5, 0.2}, rng), ConfigError);
    CHECK_THROWS_AS(sample_activation_mask(std::vector<double>{1.5, 0.5}, rng), ConfigError);
}

TEST_CASE("mask inclusion frequencies match the marginals within 3 sigma") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Rng tr = rng.child(trial);
        const std::size_t m = 3 + tr.next_below(4);
        const std::size_t k = 1 + tr.next_below(m);
        auto p = random_feasible_probs(m, k, tr);
        const int draws = 40000;
        std::vector<double> freq(m, 0.0);
        for (int d = 0; d < draws; ++d) {
            auto mask = sample_activation_mask(p, tr);
            for (std::size_t i = 0; i < m; ++i) freq[i] += mask[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            freq[i] /= draws;
            const double sigma = std::sqrt(std::max(p[i] * (1.0 - p[i]), 1e-12) / draws);
            CHECK(std::abs(freq[i] - p[i]) <= 3.0 * sigma + 1e-9);
        }
    }
}

TEST_CASE("sparse gradient sampling: dense limit has zero bias") {
    Rng rng(3);
    auto probs = std::vector<double>(4, 1.0);
    QuadraticMoeObjective obj = single_client_objective(4, 3, probs, 4, rng);
    std::vector<std::vector<double>> theta(4, std::vector<double>(3, 0.5));
    auto g = sparse_grad_sample(obj, theta, 0, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(g.mask[i] == 1);
        const auto want = obj.block_grad(theta, 0, i);
        CHECK(g.blocks[i] == want);
    }
    const auto b = exact_bias(obj, theta, 0);
    CHECK(bias_norm_sq(b) == 0.0);
}

TEST_CASE("monte-carlo expectation matches p * grad within 3 standard errors") {
    Rng rng(4);
    const std::size_t m = 4, dim = 2;
    auto probs = random_feasible_probs(m, 2, rng);
    QuadraticMoeObjective obj = single_client_objective(m, dim, probs, 2, rng);
    std::vector<std::vector<double>> theta(m, std::vector<double>(dim, 0.0));

    const int draws = 100000;
    std::vector<std::vector<double>> mean(m, std::vector<double>(dim, 0.0));
    for (int d = 0; d < draws; ++d) {
        auto g = sparse_grad_sample(obj, theta, 0, rng);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dim; ++j) mean[i][j] += g.blocks[i][j];
    }
    for (std::size_t i = 0; i < m; ++i) {
        const auto grad = obj.block_grad(theta, 0, i);
        for (std::size_t j = 0; j < dim; ++j) {
            mean[i][j] /= draws;
            const double want = probs[i] * grad[j];
            const double se =
                std::abs(grad[j]) * std::sqrt(probs[i] * (1.0 - probs[i]) / draws);
            CHECK(std::abs(mean[i][j] - want) <= 3.0 * se + 1e-9);
        }
    }
}

TEST_CASE("closed-form bias meets the corollary bound cases") {
    // balanced p = K/M with unit block gradients: ||B||^2 = M (1 - K/M)^2
    const std::size_t m = 4, k = 1;
    QuadraticMoeObjective obj;
    obj.num_experts = m;
    obj.block_dim = 1;
    obj.targets.push_back(std::vector<std::vector<double>>(m, {1.0}));  // grad = -1 at 0
    obj.probs.push_back(std::vector<double>(m, double(k) / double(m)));
    obj.client_weights.push_back(1.0);
    obj.k_c.push_back(k);
    obj.validate();
    std::vector<std::vector<double>> theta(m, std::vector<double>(1, 0.0));
    const double b2 = bias_norm_sq(exact_bias(obj, theta, 0));
    CHECK(b2 == doctest::Approx(2.25));  // 4 * (0.75)^2
    CHECK(b2 == doctest::Approx(bias_lower_bound(1.0, m, k)));

    // maximal imbalance: K blocks at p = 1, the rest dead, equal norms -> upper bound
    QuadraticMoeObjective imb = obj;
    imb.probs[0] = {1.0, 0.0, 0.0, 0.0};
    const double b2i = bias_norm_sq(exact_bias(imb, theta, 0));
    CHECK(b2i == doctest::Approx(bias_upper_bound(1.0, m, k)));  // M - K = 3

    // dense limit: zero bias
    QuadraticMoeObjective dense = obj;
    dense.probs[0].assign(m, 1.0);
    dense.k_c[0] = m;
    CHECK(bias_norm_sq(exact_bias(dense, theta, 0)) == 0.0);
}

TEST_CASE("corollary sandwich holds exactly for random feasible marginals") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Rng tr = rng.child(trial);
        const std::size_t m = 2 + tr.next_below(5);  // up to 6
        const std::size_t k = 1 + tr.next_below(m);
        auto probs = random_feasible_probs(m, k, tr);
        QuadraticMoeObjective obj = single_client_objective(m, 2, probs, k, tr);
        std::vector<std::vector<double>> theta(m, std::vector<double>(2, 0.0));

        double g2_min = 1e300, g2_max = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double g2 = 0.0;
            for (double v : obj.block_grad(theta, 0, i)) g2 += v * v;
            g2_min = std::min(g2_min, g2);
            g2_max = std::max(g2_max, g2);
        }
        const double b2 = bias_norm_sq(exact_bias(obj, theta, 0));
        CHECK(b2 >= bias_lower_bound(g2_min, m, k) - 1e-12);
        CHECK(b2 <= bias_upper_bound(g2_max, m, k) + 1e-12);
    }
}

TEST_CASE("floor experiment: gaps shrink with K and vanish when unbiased") {
    Rng rng(6);
    QuadraticMoeObjective base = make_balanced_objective(2, 4, 2, 1, 1.0, rng.child(1));
    auto floors = run_floor_experiment(base, {1, 2, 4}, 2000, rng.child(2), 16);
    REQUIRE(floors.size() == 3);
    CHECK(floors[0].plateau_gap > floors[1].plateau_gap);
    CHECK(floors[1].plateau_gap > floors[2].plateau_gap);
    CHECK(floors[2].plateau_gap < 1e-4 * floors[2].initial_gap);
    for (const auto& f : floors) CHECK(!f.diverged);
}

TEST_CASE("imbalanced marginals floor at or above the balanced run") {
    Rng rng(7);
    QuadraticMoeObjective balanced = make_balanced_objective(2, 4, 2, 1, 1.0, rng.child(1));
    FloorResult fb = run_floor_single(balanced, 2000, rng.child(2), 16);

    // push each client's activation mass onto a different block
    QuadraticMoeObjective skew = balanced;
    skew.probs[0] = {0.97, 0.01, 0.01, 0.01};
    skew.probs[1] = {0.01, 0.01, 0.01, 0.97};
    FloorResult fs = run_floor_single(skew, 2000, rng.child(2), 16);
    CHECK(fs.plateau_gap >= fb.plateau_gap);
}

TEST_CASE("ideal pseudo-gradients close part of the floor") {
    Rng rng(8);
    QuadraticMoeObjective obj = make_balanced_objective(2, 4, 2, 1, 1.0, rng.child(1));
    const double rho = std::sqrt(4.0 / 1.0);

    PgFloorResult cmp = pg_floor_comparison(obj, 2000, rho, rng.child(2), 16);
    CHECK(cmp.pg_gap <= cmp.naive_gap);

    // rho = 0 reduces to the naive run
    PgFloorResult zero = pg_floor_comparison(obj, 500, 0.0, rng.child(3), 4);
    CHECK(zero.pg_gap == zero.naive_gap);

    // dense K = M: no dead blocks, runs identical
    QuadraticMoeObjective dense = make_balanced_objective(2, 4, 2, 4, 1.0, rng.child(4));
    PgFloorResult same = pg_floor_comparison(dense, 500, rho, rng.child(5), 4);
    CHECK(same.pg_gap == same.naive_gap);
}

TEST_CASE("bias report: client norms, bounds, and aggregate") {
    Rng rng(12);
    QuadraticMoeObjective obj = make_balanced_objective(3, 4, 2, 2, 1.0, rng);
    std::vector<std::vector<double>> theta(4, std::vector<double>(2, 0.0));
    BiasReport rep = make_bias_report(obj, theta);
    REQUIRE(rep.client_bias_norm_sq.size() == 3);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(rep.client_bias_norm_sq[c] >= rep.lower_bounds[c] - 1e-12);
        CHECK(rep.client_bias_norm_sq[c] <= rep.upper_bounds[c] + 1e-12);
        CHECK(rep.client_bias_norm_sq[c] ==
              doctest::Approx(bias_norm_sq(exact_bias(obj, theta, c))));
    }
    // aggregate norm is at most the weighted mean of client norms (convexity)
    double mean = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
        mean += obj.client_weights[c] * rep.client_bias_norm_sq[c];
    CHECK(rep.aggregate_bias_norm_sq <= mean + 1e-12);

    // direct double-loop oracle for the aggregate
    const auto agg = aggregate_bias(obj, theta);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double want = 0.0;
            for (std::size_t c = 0; c < 3; ++c)
                want += obj.client_weights[c] * exact_bias(obj, theta, c)[i][j];
            CHECK(agg[i][j] == doctest::Approx(want));
        }
}

TEST_CASE("objective validation rejects infeasible configurations") {
    Rng rng(9);
    QuadraticMoeObjective obj = make_balanced_objective(1, 4, 2, 2, 1.0, rng);
    obj.probs[0][0] = 1.2;
    CHECK_THROWS_AS(obj.validate(), ConfigError);
    obj.probs[0][0] = 0.4;  // row sum now != K
    CHECK_THROWS_AS(obj.validate(), ConfigError);
}
