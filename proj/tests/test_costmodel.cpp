#include <doctest.h>

#include <cmath>
#include <vector>

#include "ubsmoe/costmodel.hpp"
#include "ubsmoe/errors.hpp"

using namespace ubsmoe::cost;

namespace {

ModelDims paper_dims() {
    ModelDims d;  // defaults are the paper-scale backbone dims
    return d;
}

}  // namespace

TEST_CASE("expert component reduction is exactly 1 - k/8") {
    ModelDims dims = paper_dims();
    const double e1 = expert_component_flops(dims, 1);
    const double e8 = expert_component_flops(dims, 8);
    // the full reduction ladder: 87.5% / 75% / 50% / 0% at K = 1, 2, 4, 8
    CHECK(1.0 - e1 / e8 == doctest::Approx(0.875));
    CHECK(1.0 - expert_component_flops(dims, 2) / e8 == doctest::Approx(0.75));
    CHECK(1.0 - expert_component_flops(dims, 4) / e8 == doctest::Approx(0.5));
}

TEST_CASE("router term is independent of k_c") {
    ModelDims dims = paper_dims();
    // subtracting the expert component leaves a k-independent remainder
    const double r1 = client_cost_ubsmoe(dims, 1) - expert_component_flops(dims, 1);
    const double r8 = client_cost_ubsmoe(dims, 8) - expert_component_flops(dims, 8);
    CHECK(r1 == doctest::Approx(r8));
}

TEST_CASE("end-to-end budget ratio reproduces the reported ladder shape") {
    ModelDims dims = paper_dims();
    const double low = client_cost_ubsmoe_end_to_end(dims, 1);
    const double high = client_cost_ubsmoe_end_to_end(dims, 8);
    const double target = 4.02e11 / 8.25e11;
    CHECK(std::abs(low / high - target) / target < 0.15);
}

TEST_CASE("LoRA-rank client cost barely moves with the rank") {
    ModelDims dims = paper_dims();
    // the paper's dense-model rank ladder
    const double lo = client_cost_lora_rank(dims, 12, Method::FlexLora);
    const double hi = client_cost_lora_rank(dims, 40, Method::FlexLora);
    CHECK((hi - lo) / lo < 0.10);

    // and the SMoE-calibrated ladder
    const double lo2 = client_cost_lora_rank(dims, 6, Method::Flora);
    const double hi2 = client_cost_lora_rank(dims, 20, Method::Flora);
    CHECK((hi2 - lo2) / lo2 < 0.10);

    // quartering the rank from the max changes the total by far less than 10%
    const double quarter = client_cost_lora_rank(dims, 10, Method::Flora);
    const double full = client_cost_lora_rank(dims, 40, Method::Flora);
    CHECK((full - quarter) / full < 0.10);
}

TEST_CASE("rank zero limit is the pure dense FFN cost") {
    ModelDims dims = paper_dims();
    const double dense = client_cost_lora_rank(dims, 0, Method::Flora);
    const double want = kFlopsPerMac * kFwdBwd * double(dims.gamma) * double(dims.batch) *
                        double(dims.seq) * double(dims.layers) * double(dims.d) *
                        double(dims.l);
    CHECK(dense == doctest::Approx(want));
}

TEST_CASE("HetLoRA minus FLoRA is exactly the pruning term") {
    ModelDims dims = paper_dims();
    for (std::size_t rc : {6u, 12u, 40u}) {
        const double diff = client_cost_lora_rank(dims, rc, Method::HetLora) -
                            client_cost_lora_rank(dims, rc, Method::Flora);
        const double want = double(dims.layers) * double(rc) * double(dims.d + dims.l);
        CHECK(diff == doctest::Approx(want));
    }
}

TEST_CASE("communication costs and the download factor of two") {
    ModelDims dims = paper_dims();
    const double ub_down = comm_cost_dominant(dims, Method::UbSmoe, Direction::Download);
    const double a3_down = comm_cost_dominant(dims, Method::A3Smoe, Direction::Download);
    CHECK(ub_down / a3_down == 2.0);  // exact on the dominant term
    const double full_ratio = comm_cost(dims, Method::UbSmoe, Direction::Download) /
                              comm_cost(dims, Method::A3Smoe, Direction::Download);
    CHECK(full_ratio == doctest::Approx(2.0).epsilon(1e-5));

    // upload differs by exactly L extra scalars
    const double ub_up = comm_cost(dims, Method::UbSmoe, Direction::Upload);
    const double a3_up = comm_cost(dims, Method::A3Smoe, Direction::Upload);
    CHECK(ub_up - a3_up == doctest::Approx(double(dims.layers)));

    ModelDims no_layers = dims;
    no_layers.layers = 0;
    CHECK(comm_cost(no_layers, Method::UbSmoe, Direction::Download) == 0.0);
    CHECK(comm_cost(no_layers, Method::Flora, Direction::Upload, 8) == 0.0);
}

TEST_CASE("server costs: linearity in C, SVD blowup, zero clients") {
    ModelDims dims = paper_dims();
    ModelDims d1 = dims, d2 = dims, d3 = dims;
    d1.clients = 1;
    d2.clients = 2;
    d3.clients = 3;
    // affine in C: equal increments per added client
    const double inc1 = server_cost(d2, Method::UbSmoe) - server_cost(d1, Method::UbSmoe);
    const double inc2 = server_cost(d3, Method::UbSmoe) - server_cost(d2, Method::UbSmoe);
    CHECK(inc1 == doctest::Approx(inc2));

    CHECK(server_cost(dims, Method::FlexLora, 40) / server_cost(dims, Method::Flora, 40) >
          100.0);

    ModelDims none = dims;
    none.clients = 0;
    CHECK(server_cost(none, Method::UbSmoe) == 0.0);
    CHECK(server_cost(none, Method::FlexLora, 40) == 0.0);
}

TEST_CASE("costs are nondecreasing in every dimension") {
    ModelDims base;
    base.d = 64;
    base.l = 48;
    base.layers = 4;
    base.experts = 8;
    base.rank = 4;
    base.gamma = 2;
    base.batch = 2;
    base.seq = 32;
    base.clients = 4;
    base.vocab = 100;

    auto all_costs = [](const ModelDims& d) {
        return std::vector<double>{client_cost_ubsmoe(d, 2),
                                   client_cost_ubsmoe_end_to_end(d, 2),
                                   client_cost_lora_rank(d, 3, Method::Flora),
                                   comm_cost(d, Method::UbSmoe, Direction::Download),
                                   server_cost(d, Method::UbSmoe)};
    };
    const auto ref = all_costs(base);
    auto check_bump = [&](ModelDims bumped) {
        const auto got = all_costs(bumped);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] >= ref[i]);
    };
    ModelDims b;
    b = base; b.d += 8; check_bump(b);
    b = base; b.l += 8; check_bump(b);
    b = base; b.layers += 1; check_bump(b);
    b = base; b.experts += 2; check_bump(b);
    b = base; b.rank += 1; check_bump(b);
    b = base; b.gamma += 1; check_bump(b);
    b = base; b.batch += 1; check_bump(b);
    b = base; b.seq += 8; check_bump(b);
    b = base; b.clients += 1; check_bump(b);

    // ub-smoe client cost strictly increases in k_c
    CHECK(client_cost_ubsmoe(base, 3) > client_cost_ubsmoe(base, 2));
}

TEST_CASE("cost report covers every method and budget") {
    ModelDims dims = paper_dims();
    const std::vector<std::size_t> kc{1, 2, 4, 8};
    const std::vector<std::size_t> rc{6, 8, 12, 20};
    const auto rows = build_cost_report(dims, kc, rc);
    CHECK(rows.size() == 2 * kc.size() + 4 * rc.size());
    for (const auto& row : rows) {
        CHECK(row.client_flops > 0.0);
        CHECK(row.server_flops > 0.0);
        CHECK(row.upload_params > 0.0);
        CHECK(row.download_params > 0.0);
    }
    // the sparsity rows carry the end-to-end column and the ladder of k_c
    CHECK(rows[0].method == Method::UbSmoe);
    CHECK(rows[0].k_c == 1);
    CHECK(rows[0].client_flops_end_to_end > rows[0].client_flops);
    CHECK_THROWS_AS(build_cost_report(dims, {}, rc), ubsmoe::ConfigError);
}

TEST_CASE("cost model rejects bad arguments") {
    ModelDims dims = paper_dims();
    CHECK_THROWS_AS(client_cost_ubsmoe(dims, 0), ubsmoe::ConfigError);
    CHECK_THROWS_AS(client_cost_ubsmoe(dims, dims.experts + 1), ubsmoe::ConfigError);
    CHECK_THROWS_AS(client_cost_lora_rank(dims, 8, Method::UbSmoe), ubsmoe::ConfigError);
    CHECK_THROWS_AS(comm_cost(dims, Method::Flora, Direction::Upload, 0), ubsmoe::ConfigError);
}
