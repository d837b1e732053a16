#pragma once

// Run configuration: strict JSON schema with defaults applied for omitted
// fields. Every federation/SMoE precondition is checked at parse time so
// invalid configs are rejected before any compute.

#include <cstdint>
#include <string>
#include <vector>

#include "ubsmoe/federation.hpp"
#include "ubsmoe/synthdata.hpp"

namespace ubsmoe {

struct DimsConfig {
    std::size_t d = 16;
    std::size_t l = 16;
    std::size_t layers = 2;
    std::size_t experts = 8;
    std::size_t rank = 2;
    double alpha = 0.0;  // 0 means "default to rank" (alpha / r = 1)
};

struct InitConfig {
    double w0_scale = 1.0;
    double router_scale = 1.0;
};

struct OutputConfig {
    std::string dir;  // empty -> UBSMOE_OUT_DIR or current directory
    std::string metrics = "metrics.csv";
    std::string summary = "summary.json";
    std::string checkpoint;  // empty -> no checkpoint written
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::size_t rounds = 10;
    std::size_t clients = 8;
    std::vector<double> budgets = {0.125, 0.25};  // cycled over clients
    std::size_t k_max = 8;
    std::size_t n_p = 2;
    DimsConfig dims;
    double eta = 0.05;
    std::size_t gamma = 10;
    std::size_t batch_size = 8;
    double zeta = 0.9;
    double eps = 1e-6;
    double lambda = 0.01;
    double phi_min = -1.0;
    double phi_max = 1.0;
    bool pg_enabled = true;
    double pg_clip = 2.0;
    bool dmr_enabled = true;
    PhiUpload phi_upload = PhiUpload::Keep;
    double participation = 1.0;
    double dirichlet_alpha = 0.1;
    TaskSpec task;
    InitConfig init;
    OutputConfig output;

    Hyper hyper() const;
    ModelInit model_init() const;
    TaskSpec task_spec() const;  // task with input dim tied to dims.d
    double effective_alpha() const;
};

// Accepts a file path or inline JSON text (text is recognized by a leading
// '{'). Unknown keys and constraint violations raise ConfigError naming the
// offending field.
RunConfig parse_config(const std::string& path_or_text);

// Canonical serialization: fixed key order, all defaults materialized.
// serialize(parse(x)) == serialize(parse(serialize(parse(x)))).
std::string serialize_config(const RunConfig& cfg);

void validate_config(const RunConfig& cfg);

}  // namespace ubsmoe
