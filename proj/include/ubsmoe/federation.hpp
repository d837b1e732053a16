#pragma once

// Federated protocol pieces: client profiles, local training with
// pseudo-gradient injection, FedAvg aggregation, pseudo-gradient buffer
// computation, utilization statistics, and utilization-aware modulation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ubsmoe/model.hpp"
#include "ubsmoe/rng.hpp"
#include "ubsmoe/synthdata.hpp"

namespace ubsmoe {

struct ClientProfile {
    std::size_t id = 0;
    double beta = 1.0;   // compute budget in (0, 1]
    std::size_t k_c = 1; // floor(k_max * beta), clamped to >= 1
    double p_c = 1.0;    // statistical weight, shard-size proportional
    double rho_c = 1.0;  // sqrt(k_bar / k_c)
    std::vector<std::size_t> shard;  // sample indices into the task
};

struct PgAdapter {
    Matrix gb;  // matches adapter b
    Matrix ga;  // matches adapter a
};

struct PgBuffer {
    std::vector<std::vector<PgAdapter>> layers;  // [layer][expert]
    double clip_threshold = 2.0;

    static PgBuffer zeros_like(const Model& m, double clip);
};

struct UtilizationStats {
    std::vector<std::vector<std::uint64_t>> counts;  // [layer][expert] activations
    std::vector<std::uint64_t> tokens;               // [layer] tokens processed
};

enum class PhiUpload { Keep, Discard };

struct Hyper {
    double eta = 0.05;
    std::size_t gamma = 10;  // local gradient steps per round
    std::size_t batch_size = 8;
    double zeta = 0.9;
    double eps = 1e-6;
    double lambda = 0.01;
    double phi_min = -1.0;
    double phi_max = 1.0;
    std::size_t n_p = 2;
    bool pg_enabled = true;
    double pg_clip = 2.0;
    bool dmr_enabled = true;
    PhiUpload phi_upload = PhiUpload::Keep;
    TaskKind task_kind = TaskKind::ClusterRegression;
};

struct ServerState {
    Model global;
    PgBuffer pg;
    std::vector<std::vector<double>> global_util;  // [layer][expert]
    std::size_t round = 0;
    Hyper hyper;
    double k_bar = 0.0;
    double u_star = 0.0;
};

struct ClientTrainResult {
    Model params;
    UtilizationStats stats;
    std::vector<double> loss_trace;       // task + phi-regularization per step
    std::vector<double> task_loss_trace;  // task component per step
    double max_gate_err = 0.0;            // max |sum of gate weights - 1| observed
};

// Receives the applied (post-injection) gradient of every local step.
using AppliedGradObserver = std::function<void(const ModelGradients&)>;

// floor(k_max * beta) clamped to >= 1; beta must be in (0, 1].
std::size_t derive_sparsity(double beta, std::size_t k_max);

// Activated experts keep their real gradients; non-activated experts receive
// rho_c * pg entries (marked pseudo). Router and phi gradients pass through.
LayerGradients pg_inject(LayerGradients grads, const std::vector<bool>& activated,
                         const std::vector<PgAdapter>& pg_layer, double rho_c);

// gamma SGD steps at rate eta on minibatches drawn from the client's shard.
// Loss is the task loss plus the phi range regularizer (DMR only); each step
// applies pseudo-gradient injection (when enabled) before the update.
// Batches are the whole shard in order when batch_size >= shard size,
// otherwise batch_size uniform draws with replacement.
ClientTrainResult client_local_train(const ClientProfile& profile, const Model& start,
                                     const PgBuffer& pg, const SyntheticTask& task,
                                     const Hyper& hyper, Rng rng,
                                     const AppliedGradObserver* observer = nullptr);

// Entrywise weighted average of every trainable tensor (adapters, router,
// phi, head). Frozen w0 is copied from the first client. Weights must sum
// to 1 within 1e-12.
Model aggregate_fedavg(const std::vector<const Model*>& client_params,
                       const std::vector<double>& weights);

// Entrywise (prev - next) / (eta * gamma) over expert adapters, then each
// tensor is clipped to 2-norm <= clip.
PgBuffer compute_pg_buffer(const Model& prev, const Model& next, double eta,
                           std::size_t gamma, double clip);

// u~_i = sum_c w_c * counts_c[i] / tokens_c per layer.
std::vector<std::vector<double>> update_global_utilization(
    const std::vector<const UtilizationStats*>& stats, const std::vector<double>& weights);

// target = tanh(u_star / (u~ + eps) - 1); new phi = (1 - zeta) * target +
// zeta * phi_prev, clamped to [phi_min, phi_max].
std::vector<double> update_modulation(std::span<const double> phi_prev,
                                      std::span<const double> u_tilde, double u_star,
                                      double eps, double zeta, double phi_min, double phi_max);

// Deterministic per-(round, client) training stream derivation shared by the
// runner and by oracles that need to replay the exact same batches.
Rng client_train_stream(std::uint64_t seed, std::size_t round, std::size_t client_id);

}  // namespace ubsmoe
