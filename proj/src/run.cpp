#include "ubsmoe/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "ubsmoe/costmodel.hpp"
#include "ubsmoe/errors.hpp"

namespace ubsmoe {

namespace {

constexpr std::uint64_t kTaskDomain = 0x7A5C;
constexpr std::uint64_t kPartitionDomain = 0x9A27;
constexpr std::uint64_t kModelDomain = 0x3B1D;
constexpr std::uint64_t kParticipationDomain = 0x51E9;

std::vector<std::size_t> sample_participants(std::size_t n_clients, double rate, Rng rng) {
    if (rate >= 1.0) {
        std::vector<std::size_t> all(n_clients);
        for (std::size_t c = 0; c < n_clients; ++c) all[c] = c;
        return all;
    }
    auto count = static_cast<std::size_t>(std::llround(rate * double(n_clients)));
    count = std::clamp<std::size_t>(count, 1, n_clients);
    std::vector<std::size_t> pool(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) pool[c] = c;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.next_below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

cost::ModelDims run_cost_dims(const RunConfig& cfg) {
    cost::ModelDims dims;
    dims.d = cfg.dims.d;
    dims.l = cfg.dims.l;
    dims.layers = cfg.dims.layers;
    dims.experts = cfg.dims.experts;
    dims.rank = cfg.dims.rank;
    dims.gamma = cfg.gamma;
    dims.batch = cfg.batch_size;
    dims.seq = 1;  // samples are single vectors, not token sequences
    dims.clients = cfg.clients;
    return dims;
}

}  // namespace

RunResult run_federated(const RunConfig& cfg) {
    validate_config(cfg);
    const auto t_start = std::chrono::steady_clock::now();

    Rng master(cfg.seed);
    SyntheticTask task = generate_task(cfg.task_spec(), master.child(kTaskDomain));
    Partition part =
        partition_dirichlet(task, cfg.clients, cfg.dirichlet_alpha, master.child(kPartitionDomain));

    RunResult res;
    res.profiles.resize(cfg.clients);
    double total_samples = 0.0;
    for (std::size_t c = 0; c < cfg.clients; ++c) total_samples += double(part.shards[c].size());
    double k_bar = 0.0;
    for (std::size_t c = 0; c < cfg.clients; ++c) {
        ClientProfile& p = res.profiles[c];
        p.id = c;
        p.beta = cfg.budgets[c % cfg.budgets.size()];
        p.k_c = derive_sparsity(p.beta, cfg.k_max);
        p.p_c = double(part.shards[c].size()) / total_samples;
        p.shard = part.shards[c];
        k_bar += p.p_c * double(p.k_c);
    }
    for (auto& p : res.profiles) p.rho_c = std::sqrt(k_bar / double(p.k_c));

    // tiers: ascending distinct budgets
    res.tier_betas = cfg.budgets;
    std::sort(res.tier_betas.begin(), res.tier_betas.end());
    res.tier_betas.erase(std::unique(res.tier_betas.begin(), res.tier_betas.end()),
                         res.tier_betas.end());
    res.client_tier.resize(cfg.clients);
    for (std::size_t c = 0; c < cfg.clients; ++c)
        res.client_tier[c] = std::size_t(
            std::lower_bound(res.tier_betas.begin(), res.tier_betas.end(),
                             res.profiles[c].beta) -
            res.tier_betas.begin());

    ServerState& state = res.state;
    state.hyper = cfg.hyper();
    state.global = init_model(cfg.model_init(), master.child(kModelDomain));
    state.pg = PgBuffer::zeros_like(state.global, cfg.pg_clip);
    state.global_util.assign(cfg.dims.layers, std::vector<double>(cfg.dims.experts, 0.0));
    state.round = 0;
    state.k_bar = k_bar;
    state.u_star = k_bar / double(cfg.dims.experts);

    const cost::ModelDims cost_dims = run_cost_dims(cfg);
    Rng participation_rng = master.child(kParticipationDomain);

    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const std::vector<std::size_t> participants =
            sample_participants(cfg.clients, cfg.participation, participation_rng.child(t));

        double wsum = 0.0;
        for (std::size_t c : participants) wsum += res.profiles[c].p_c;
        std::vector<double> weights;
        weights.reserve(participants.size());
        for (std::size_t c : participants) weights.push_back(res.profiles[c].p_c / wsum);

        std::vector<ClientTrainResult> outs;
        outs.reserve(participants.size());
        for (std::size_t pi = 0; pi < participants.size(); ++pi) {
            const std::size_t c = participants[pi];
            try {
                outs.push_back(client_local_train(res.profiles[c], state.global, state.pg, task,
                                                  state.hyper,
                                                  client_train_stream(cfg.seed, t, c)));
            } catch (const ConfigError& e) {
                throw ConfigError("round " + std::to_string(t) + " client " + std::to_string(c) +
                                  ": " + e.what());
            } catch (const NumericError& e) {
                throw NumericError("round " + std::to_string(t) + " client " +
                                   std::to_string(c) + ": " + e.what());
            }
            res.max_gate_err = std::max(res.max_gate_err, outs.back().max_gate_err);
        }

        const Model prev_global = state.global;
        std::vector<std::vector<double>> prev_phi;
        for (const auto& layer : state.global.layers) prev_phi.push_back(layer.phi);

        std::vector<const Model*> params;
        std::vector<const UtilizationStats*> stats;
        for (const auto& o : outs) {
            params.push_back(&o.params);
            stats.push_back(&o.stats);
        }
        state.global = aggregate_fedavg(params, weights);
        if (cfg.phi_upload == PhiUpload::Discard)
            for (std::size_t li = 0; li < state.global.layers.size(); ++li)
                state.global.layers[li].phi = prev_phi[li];

        state.pg = compute_pg_buffer(prev_global, state.global, cfg.eta, cfg.gamma, cfg.pg_clip);
        state.global_util = update_global_utilization(stats, weights);

        double round_k_bar = 0.0;
        for (std::size_t pi = 0; pi < participants.size(); ++pi)
            round_k_bar += weights[pi] * double(res.profiles[participants[pi]].k_c);
        for (const auto& layer_util : state.global_util) {
            double s = 0.0;
            for (double u : layer_util) s += u;
            res.max_util_sum_err = std::max(res.max_util_sum_err, std::abs(s - round_k_bar));
        }

        if (cfg.dmr_enabled) {
            for (auto& layer : state.global.layers)
                layer.phi = update_modulation(layer.phi, state.global_util[layer.layer_index],
                                              state.u_star, cfg.eps, cfg.zeta, cfg.phi_min,
                                              cfg.phi_max);
        }

        RoundMetrics rm;
        rm.round = t;
        rm.loss_by_tier.assign(res.tier_betas.size(),
                               std::numeric_limits<double>::quiet_NaN());
        std::vector<double> tier_sum(res.tier_betas.size(), 0.0);
        std::vector<std::size_t> tier_n(res.tier_betas.size(), 0);
        double weighted_loss = 0.0;
        for (std::size_t pi = 0; pi < participants.size(); ++pi) {
            const auto& trace = outs[pi].task_loss_trace;
            double mean = 0.0;
            for (double v : trace) mean += v;
            mean /= double(trace.size());
            const std::size_t tier = res.client_tier[participants[pi]];
            tier_sum[tier] += mean;
            tier_n[tier]++;
            weighted_loss += weights[pi] * mean;
        }
        for (std::size_t q = 0; q < res.tier_betas.size(); ++q)
            if (tier_n[q]) rm.loss_by_tier[q] = tier_sum[q] / double(tier_n[q]);
        rm.loss_weighted_mean = weighted_loss;
        if (!std::isfinite(weighted_loss))
            throw NumericError("round " + std::to_string(t) + ": non-finite training loss");

        for (const auto& layer_util : state.global_util) {
            rm.entropy_per_layer.push_back(utilization_entropy(layer_util));
            rm.gini_per_layer.push_back(gini(layer_util));
        }
        rm.entropy_mean = 0.0;
        rm.gini_mean = 0.0;
        for (std::size_t li = 0; li < rm.entropy_per_layer.size(); ++li) {
            rm.entropy_mean += rm.entropy_per_layer[li];
            rm.gini_mean += rm.gini_per_layer[li];
        }
        rm.entropy_mean /= double(rm.entropy_per_layer.size());
        rm.gini_mean /= double(rm.gini_per_layer.size());

        std::vector<double> phi_flat, util_flat;
        for (std::size_t li = 0; li < state.global.layers.size(); ++li) {
            const auto& phi = state.global.layers[li].phi;
            phi_flat.insert(phi_flat.end(), phi.begin(), phi.end());
            util_flat.insert(util_flat.end(), state.global_util[li].begin(),
                             state.global_util[li].end());
        }
        try {
            rm.pearson_phi_util = pearson(phi_flat, util_flat);
        } catch (const NumericError&) {
            rm.pearson_phi_util = std::numeric_limits<double>::quiet_NaN();
        }

        for (std::size_t c = 0; c < cfg.clients; ++c)
            rm.flops_per_client.push_back(
                cost::client_cost_ubsmoe(cost_dims, res.profiles[c].k_c));

        res.rounds.push_back(std::move(rm));
        state.round = t + 1;
    }

    res.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

}  // namespace ubsmoe
