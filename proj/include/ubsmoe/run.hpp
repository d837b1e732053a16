#pragma once

// End-to-end federated runs, metric/summary emission, checkpointing, and the
// finite-difference gradient check harness.

#include <iosfwd>
#include <string>
#include <vector>

#include "ubsmoe/config.hpp"
#include "ubsmoe/federation.hpp"
#include "ubsmoe/metrics.hpp"

namespace ubsmoe {

struct RunResult {
    std::vector<RoundMetrics> rounds;
    ServerState state;  // after the final round
    std::vector<ClientProfile> profiles;
    std::vector<double> tier_betas;        // ascending distinct budgets
    std::vector<std::size_t> client_tier;  // tier index per client
    double max_gate_err = 0.0;             // max |sum gamma - 1| over all decisions
    double max_util_sum_err = 0.0;         // max per-round |sum u~ - K_bar| per layer
    double wall_time_sec = 0.0;
};

// Broadcast -> client training -> upload -> FedAvg -> pseudo-gradient buffer
// -> utilization -> modulation, for cfg.rounds rounds. Deterministic under a
// fixed seed. Errors carry round/client context.
RunResult run_federated(const RunConfig& cfg);

// Fixed-schema CSV: round, loss per budget tier, per-layer entropy, mean
// entropy, mean gini, pearson_r. Decimal floats, LF line endings.
void write_metrics_csv(const RunResult& result, std::ostream& os);

// Final metrics, the canonical config echo, seed, and wall time.
void write_summary_json(const RunConfig& cfg, const RunResult& result, std::ostream& os);

// Round-trippable JSON snapshot of the server state.
void save_checkpoint(const ServerState& state, std::ostream& os);
ServerState load_checkpoint(std::istream& is);

struct GradCheckReport {
    double max_rel_err_adapter_b = 0.0;
    double max_rel_err_adapter_a = 0.0;
    double max_rel_err_router = 0.0;
    double max_rel_err_phi = 0.0;
    double worst() const;
};

// Central finite differences (step 1e-6) against the analytic backward on
// random small layers, with the activation set held fixed.
GradCheckReport gradcheck(std::size_t trials, std::uint64_t seed);

}  // namespace ubsmoe
