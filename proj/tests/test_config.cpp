#include <doctest.h>

#include <sstream>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/run.hpp"

using namespace ubsmoe;

TEST_CASE("empty config applies the documented defaults") {
    RunConfig cfg = parse_config("{}");
    CHECK(cfg.n_p == 2);
    CHECK(cfg.zeta == doctest::Approx(0.9));
    CHECK(cfg.phi_min == doctest::Approx(-1.0));
    CHECK(cfg.phi_max == doctest::Approx(1.0));
    CHECK(cfg.pg_clip == doctest::Approx(2.0));
    CHECK(cfg.k_max == 8);
    CHECK(cfg.seed == 42);
    CHECK(cfg.pg_enabled);
    CHECK(cfg.dmr_enabled);
    CHECK(cfg.phi_upload == PhiUpload::Keep);
    CHECK(cfg.dirichlet_alpha == doctest::Approx(0.1));
}

TEST_CASE("constraint violations are rejected at parse time") {
    // k_c = floor(8 * 1.0) = 8 > n_p = 2 with DMR enabled
    CHECK_THROWS_AS(parse_config(R"({"budgets": [1.0]})"), ConfigError);
    // fine once n_p is raised or DMR disabled
    CHECK_NOTHROW(parse_config(R"({"budgets": [1.0], "n_p": 8, "dims": {"experts": 16}})"));
    CHECK_NOTHROW(parse_config(R"({"budgets": [1.0], "dmr": {"enabled": false}})"));

    CHECK_THROWS_AS(parse_config(R"({"unknown_key": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"dims": {"bogus": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"eta": 0.0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"zeta": 1.5})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"budgets": []})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"budgets": [2.0]})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"dims": {"experts": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"dims": {"rank": 99}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"task": {"kind": "nonsense"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"dmr": {"phi_upload": "maybe"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json at all {"), ConfigError);
}

TEST_CASE("serialize(parse(x)) is canonical") {
    const std::string text = R"({"seed": 7, "rounds": 3, "eta": 0.125})";
    RunConfig cfg = parse_config(text);
    const std::string canon = serialize_config(cfg);
    RunConfig back = parse_config(canon);
    CHECK(serialize_config(back) == canon);
    CHECK(back.seed == 7);
    CHECK(back.rounds == 3);
    CHECK(back.eta == 0.125);
    // alpha defaults to the rank
    CHECK(back.effective_alpha() == doctest::Approx(double(cfg.dims.rank)));
}

TEST_CASE("metrics csv has the fixed schema") {
    RunConfig cfg = parse_config(R"({"rounds": 2, "gamma": 2, "task": {"samples": 64}})");
    RunResult res = run_federated(cfg);
    std::stringstream ss;
    write_metrics_csv(res, ss);
    std::string header;
    std::getline(ss, header);
    CHECK(header ==
          "round,loss_b1,loss_b2,entropy_l1,entropy_l2,entropy_mean,gini_mean,pearson_r");
    std::string row;
    std::size_t rows = 0;
    while (std::getline(ss, row))
        if (!row.empty()) ++rows;
    CHECK(rows == 2);
    // LF endings only
    CHECK(ss.str().find('\r') == std::string::npos);
}

TEST_CASE("summary json echoes the canonical config") {
    RunConfig cfg = parse_config(R"({"rounds": 1, "gamma": 2, "task": {"samples": 64}})");
    RunResult res = run_federated(cfg);
    std::stringstream ss;
    write_summary_json(cfg, res, ss);
    const std::string text = ss.str();
    CHECK(text.find("\"config\"") != std::string::npos);
    CHECK(text.find("\"n_p\": 2") != std::string::npos);
    CHECK(text.find("\"max_gate_weight_error\"") != std::string::npos);
    CHECK(text.find("\"wall_time_sec\"") != std::string::npos);
}
