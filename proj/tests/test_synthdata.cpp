#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/federation.hpp"
#include "ubsmoe/synthdata.hpp"

using namespace ubsmoe;

TEST_CASE("task generation is deterministic under the seed") {
    TaskSpec spec;
    spec.num_samples = 64;
    SyntheticTask a = generate_task(spec, Rng(42));
    SyntheticTask b = generate_task(spec, Rng(42));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.x[i] == b.x[i]);
        CHECK(a.y[i] == b.y[i]);
        CHECK(a.cluster[i] == b.cluster[i]);
    }
    SyntheticTask c = generate_task(spec, Rng(43));
    CHECK(a.x[0] != c.x[0]);
}

TEST_CASE("well-separated clusters are recovered by nearest mean") {
    TaskSpec spec;
    spec.input_dim = 6;
    spec.num_clusters = 4;
    spec.num_samples = 200;
    spec.cluster_spread = 10.0;  // centers ~10 sigma apart vs unit sample noise
    SyntheticTask task = generate_task(spec, Rng(7));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < task.size(); ++i) {
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < spec.num_clusters; ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < spec.input_dim; ++j) {
                const double d = task.x[i][j] - task.cluster_means[k][j];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                arg = k;
            }
        }
        if (arg == task.cluster[i]) ++correct;
    }
    CHECK(correct == task.size());
}

TEST_CASE("single solvable cluster: dense training drives the loss to zero") {
    TaskSpec spec;
    spec.input_dim = 4;
    spec.output_dim = 2;
    spec.num_clusters = 1;
    spec.num_samples = 64;
    spec.noise_sigma = 0.0;
    spec.map_rank = 2;
    SyntheticTask task = generate_task(spec, Rng(11));

    ModelInit init;
    init.input_dim = 4;
    init.hidden_dim = 4;
    init.num_layers = 1;
    init.num_experts = 2;
    init.rank = 2;
    init.alpha = 2.0;
    init.output_dim = 2;
    init.w0_scale = 0.0;  // pure adapter capacity; rank matches the true map
    Model model = init_model(init, Rng(12));

    ClientProfile prof;
    prof.k_c = 2;  // dense limit
    prof.rho_c = 1.0;
    prof.shard.resize(task.size());
    for (std::size_t i = 0; i < task.size(); ++i) prof.shard[i] = i;

    Hyper hyper;
    hyper.eta = 0.08;
    hyper.gamma = 900;
    hyper.batch_size = 64;  // full batch
    hyper.n_p = 2;
    hyper.pg_enabled = false;
    hyper.dmr_enabled = false;

    PgBuffer pg = PgBuffer::zeros_like(model, 2.0);
    ClientTrainResult res = client_local_train(prof, model, pg, task, hyper, Rng(13));
    CHECK(res.task_loss_trace.front() > 1e-2);
    CHECK(res.task_loss_trace.back() < 1e-3);
}

TEST_CASE("dirichlet partition: base properties") {
    TaskSpec spec;
    spec.num_clusters = 4;
    spec.num_samples = 256;
    SyntheticTask task = generate_task(spec, Rng(3));

    Partition part = partition_dirichlet(task, 6, 0.5, Rng(4));
    REQUIRE(part.shards.size() == 6);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& shard : part.shards) {
        CHECK(!shard.empty());
        total += shard.size();
        for (std::size_t i : shard) CHECK(seen.insert(i).second);  // disjoint
    }
    CHECK(total == task.size());  // cover

    // empirical client weights sum to one
    double psum = 0.0;
    for (const auto& shard : part.shards) psum += double(shard.size()) / double(task.size());
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-12));

    // single client owns everything
    Partition solo = partition_dirichlet(task, 1, 0.1, Rng(5));
    CHECK(solo.shards[0].size() == task.size());

    CHECK_THROWS_AS(partition_dirichlet(task, task.size() + 1, 0.1, Rng(6)), ConfigError);
    CHECK_THROWS_AS(partition_dirichlet(task, 2, 0.0, Rng(6)), ConfigError);
}

TEST_CASE("dirichlet concentration controls skew") {
    TaskSpec spec;
    spec.num_clusters = 6;
    spec.num_samples = 600;
    SyntheticTask task = generate_task(spec, Rng(8));

    // alpha -> infinity: mixtures within 5% of uniform
    Partition flat = partition_dirichlet(task, 4, 1e6, Rng(9));
    for (const auto& mix : flat.mixtures)
        for (double w : mix) CHECK(std::abs(w - 1.0 / 6.0) < 0.05);

    // alpha = 0.1: strong skew; mean max share > 0.5 across 100 seeds
    double mean_max = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Partition p = partition_dirichlet(task, 8, 0.1, Rng(seed));
        for (const auto& mix : p.mixtures) {
            mean_max += *std::max_element(mix.begin(), mix.end());
            ++count;
        }
    }
    mean_max /= double(count);
    CHECK(mean_max > 0.5);
}

TEST_CASE("task CSV round trip") {
    TaskSpec spec;
    spec.input_dim = 3;
    spec.output_dim = 2;
    spec.num_clusters = 2;
    spec.num_samples = 20;
    SyntheticTask task = generate_task(spec, Rng(10));

    std::stringstream ss;
    dump_task_csv(task, ss);
    SyntheticTask back = load_task_csv(ss, spec);
    REQUIRE(back.size() == task.size());
    for (std::size_t i = 0; i < task.size(); ++i) {
        CHECK(back.x[i] == task.x[i]);  // exact: shortest round-trip formatting
        CHECK(back.y[i] == task.y[i]);
        CHECK(back.cluster[i] == task.cluster[i]);
    }

    CHECK_THROWS_AS(generate_task(TaskSpec{.num_samples = 0}, Rng(1)), ConfigError);
}
