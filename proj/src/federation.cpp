#include "ubsmoe/federation.hpp"

#include <cmath>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/kernels.hpp"

namespace ubsmoe {

PgBuffer PgBuffer::zeros_like(const Model& m, double clip) {
    PgBuffer pg;
    pg.clip_threshold = clip;
    pg.layers.reserve(m.layers.size());
    for (const auto& layer : m.layers) {
        std::vector<PgAdapter> row;
        row.reserve(layer.experts.size());
        for (const auto& e : layer.experts) {
            PgAdapter pa;
            pa.gb = Matrix(e.adapter.b.rows, e.adapter.b.cols);
            pa.ga = Matrix(e.adapter.a.rows, e.adapter.a.cols);
            row.push_back(std::move(pa));
        }
        pg.layers.push_back(std::move(row));
    }
    return pg;
}

std::size_t derive_sparsity(double beta, std::size_t k_max) {
    if (!(beta > 0.0) || beta > 1.0) throw ConfigError("derive_sparsity: beta must be in (0,1]");
    if (k_max < 1) throw ConfigError("derive_sparsity: k_max must be >= 1");
    auto k = static_cast<std::size_t>(std::floor(beta * static_cast<double>(k_max)));
    return std::max<std::size_t>(k, 1);
}

LayerGradients pg_inject(LayerGradients grads, const std::vector<bool>& activated,
                         const std::vector<PgAdapter>& pg_layer, double rho_c) {
    const std::size_t m = grads.experts.size();
    if (activated.size() != m || pg_layer.size() != m)
        throw ConfigError("pg_inject: expert count mismatch");
    for (std::size_t i = 0; i < m; ++i) {
        if (activated[i]) continue;
        if (!grads.experts[i].db.same_shape(pg_layer[i].gb) ||
            !grads.experts[i].da.same_shape(pg_layer[i].ga))
            throw ConfigError("pg_inject: buffer shape mismatch");
        grads.experts[i].db = pg_layer[i].gb;
        kern::scal(grads.experts[i].db.data.data(), rho_c, grads.experts[i].db.data.size());
        grads.experts[i].da = pg_layer[i].ga;
        kern::scal(grads.experts[i].da.data.data(), rho_c, grads.experts[i].da.data.size());
        grads.experts[i].pseudo = true;
    }
    return grads;
}

ClientTrainResult client_local_train(const ClientProfile& profile, const Model& start,
                                     const PgBuffer& pg, const SyntheticTask& task,
                                     const Hyper& hyper, Rng rng,
                                     const AppliedGradObserver* observer) {
    if (hyper.gamma < 1) throw ConfigError("client_local_train: gamma must be >= 1");
    if (profile.shard.empty()) throw ConfigError("client_local_train: empty shard");
    if (hyper.batch_size < 1) throw ConfigError("client_local_train: batch_size must be >= 1");

    const std::size_t n_layers = start.num_layers();
    const std::size_t n_experts = start.num_experts();
    // vanilla Top-K ignores the candidate set; modulation is identically zero
    const std::size_t n_p = hyper.dmr_enabled ? hyper.n_p : n_experts;

    ClientTrainResult res;
    res.params = start;
    res.stats.counts.assign(n_layers, std::vector<std::uint64_t>(n_experts, 0));
    res.stats.tokens.assign(n_layers, 0);

    const bool full_batch = hyper.batch_size >= profile.shard.size();
    std::vector<double> dout;

    for (std::size_t step = 0; step < hyper.gamma; ++step) {
        Rng step_rng = rng.child(step);
        std::vector<std::size_t> batch;
        if (full_batch) {
            batch = profile.shard;
        } else {
            batch.reserve(hyper.batch_size);
            for (std::size_t b = 0; b < hyper.batch_size; ++b)
                batch.push_back(profile.shard[step_rng.next_below(profile.shard.size())]);
        }
        const double inv_n = 1.0 / static_cast<double>(batch.size());

        ModelGradients grads = zero_model_gradients(res.params);
        std::vector<std::vector<bool>> step_active(n_layers,
                                                   std::vector<bool>(n_experts, false));
        double task_loss_sum = 0.0;
        for (std::size_t idx : batch) {
            SampleTape tape = model_forward(res.params, task.x[idx], profile.k_c, n_p);
            for (std::size_t li = 0; li < n_layers; ++li) {
                const RoutingDecision& d = tape.decisions[li];
                double gate_sum = 0.0;
                for (std::size_t i : d.activation_set) {
                    res.stats.counts[li][i]++;
                    step_active[li][i] = true;
                    gate_sum += d.gate_weights[i];
                }
                res.stats.tokens[li]++;
                res.max_gate_err = std::max(res.max_gate_err, std::abs(gate_sum - 1.0));
            }
            task_loss_sum += task_loss(hyper.task_kind, tape.output, task.y[idx], &dout);
            model_backward(res.params, tape, dout, inv_n, grads);
        }
        const double step_task_loss = task_loss_sum * inv_n;

        double reg_loss = 0.0;
        if (hyper.dmr_enabled) {
            for (std::size_t li = 0; li < n_layers; ++li) {
                auto [rl, rg] = phi_regularization_loss(res.params.layers[li].phi,
                                                        hyper.phi_min, hyper.phi_max,
                                                        hyper.lambda);
                reg_loss += rl;
                kern::axpy(grads.layers[li].phi.data(), 1.0, rg.data(), rg.size());
            }
        }

        if (hyper.pg_enabled) {
            for (std::size_t li = 0; li < n_layers; ++li)
                grads.layers[li] = pg_inject(std::move(grads.layers[li]), step_active[li],
                                             pg.layers[li], profile.rho_c);
        }

        if (observer && *observer) (*observer)(grads);
        apply_sgd(res.params, grads, hyper.eta, hyper.dmr_enabled);

        res.task_loss_trace.push_back(step_task_loss);
        res.loss_trace.push_back(step_task_loss + reg_loss);
    }
    return res;
}

namespace {

void weighted_add(Matrix& out, double w, const Matrix& in) {
    kern::axpy(out.data.data(), w, in.data.data(), in.data.size());
}

}  // namespace

Model aggregate_fedavg(const std::vector<const Model*>& client_params,
                       const std::vector<double>& weights) {
    if (client_params.empty() || client_params.size() != weights.size())
        throw ConfigError("aggregate_fedavg: empty input or weight count mismatch");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-12)
        throw ConfigError("aggregate_fedavg: weights must sum to 1");

    // frozen w0 carried over from the first client; trainable tensors zeroed
    Model out = *client_params[0];
    for (auto& layer : out.layers) {
        for (auto& e : layer.experts) {
            e.adapter.b.fill(0.0);
            e.adapter.a.fill(0.0);
        }
        layer.router_w.fill(0.0);
        layer.phi.assign(layer.phi.size(), 0.0);
    }
    out.head.w.fill(0.0);
    out.head.bias.assign(out.head.bias.size(), 0.0);

    for (std::size_t c = 0; c < client_params.size(); ++c) {
        const Model& in = *client_params[c];
        const double w = weights[c];
        if (in.layers.size() != out.layers.size())
            throw ConfigError("aggregate_fedavg: layer count mismatch");
        for (std::size_t li = 0; li < out.layers.size(); ++li) {
            SmoeLayerParams& ol = out.layers[li];
            const SmoeLayerParams& il = in.layers[li];
            if (il.experts.size() != ol.experts.size())
                throw ConfigError("aggregate_fedavg: expert count mismatch");
            for (std::size_t e = 0; e < ol.experts.size(); ++e) {
                if (!ol.experts[e].adapter.b.same_shape(il.experts[e].adapter.b) ||
                    !ol.experts[e].adapter.a.same_shape(il.experts[e].adapter.a))
                    throw ConfigError("aggregate_fedavg: adapter shape mismatch");
                weighted_add(ol.experts[e].adapter.b, w, il.experts[e].adapter.b);
                weighted_add(ol.experts[e].adapter.a, w, il.experts[e].adapter.a);
            }
            weighted_add(ol.router_w, w, il.router_w);
            kern::axpy(ol.phi.data(), w, il.phi.data(), il.phi.size());
        }
        weighted_add(out.head.w, w, in.head.w);
        kern::axpy(out.head.bias.data(), w, in.head.bias.data(), in.head.bias.size());
    }
    return out;
}

PgBuffer compute_pg_buffer(const Model& prev, const Model& next, double eta,
                           std::size_t gamma, double clip) {
    if (eta == 0.0) throw ConfigError("compute_pg_buffer: eta must be nonzero");
    if (!(eta > 0.0)) throw ConfigError("compute_pg_buffer: eta must be positive");
    if (gamma < 1) throw ConfigError("compute_pg_buffer: gamma must be >= 1");
    if (!(clip > 0.0)) throw ConfigError("compute_pg_buffer: clip must be positive");
    if (prev.layers.size() != next.layers.size())
        throw ConfigError("compute_pg_buffer: layer count mismatch");

    PgBuffer pg = PgBuffer::zeros_like(prev, clip);
    const double inv = 1.0 / (eta * static_cast<double>(gamma));
    auto fill = [&](Matrix& g, const Matrix& a, const Matrix& b) {
        if (!a.same_shape(b)) throw ConfigError("compute_pg_buffer: tensor shape mismatch");
        for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] = (a.data[i] - b.data[i]) * inv;
        const double norm = std::sqrt(kern::nrm2sq(g.data.data(), g.data.size()));
        if (norm > clip) kern::scal(g.data.data(), clip / norm, g.data.size());
    };
    for (std::size_t li = 0; li < prev.layers.size(); ++li) {
        const auto& pl = prev.layers[li];
        const auto& nl = next.layers[li];
        if (pl.experts.size() != nl.experts.size())
            throw ConfigError("compute_pg_buffer: expert count mismatch");
        for (std::size_t e = 0; e < pl.experts.size(); ++e) {
            fill(pg.layers[li][e].gb, pl.experts[e].adapter.b, nl.experts[e].adapter.b);
            fill(pg.layers[li][e].ga, pl.experts[e].adapter.a, nl.experts[e].adapter.a);
        }
    }
    return pg;
}

std::vector<std::vector<double>> update_global_utilization(
    const std::vector<const UtilizationStats*>& stats, const std::vector<double>& weights) {
    if (stats.empty() || stats.size() != weights.size())
        throw ConfigError("update_global_utilization: empty stats or weight mismatch");
    const std::size_t n_layers = stats[0]->counts.size();
    const std::size_t n_experts = n_layers ? stats[0]->counts[0].size() : 0;
    std::vector<std::vector<double>> util(n_layers, std::vector<double>(n_experts, 0.0));
    for (std::size_t c = 0; c < stats.size(); ++c) {
        const UtilizationStats& s = *stats[c];
        if (s.counts.size() != n_layers || s.tokens.size() != n_layers)
            throw ConfigError("update_global_utilization: layer grid mismatch");
        for (std::size_t li = 0; li < n_layers; ++li) {
            if (s.counts[li].size() != n_experts)
                throw ConfigError("update_global_utilization: expert grid mismatch");
            if (s.tokens[li] == 0)
                throw ConfigError("update_global_utilization: client processed no tokens");
            const double inv_n = 1.0 / static_cast<double>(s.tokens[li]);
            for (std::size_t i = 0; i < n_experts; ++i)
                util[li][i] += weights[c] * static_cast<double>(s.counts[li][i]) * inv_n;
        }
    }
    return util;
}

std::vector<double> update_modulation(std::span<const double> phi_prev,
                                      std::span<const double> u_tilde, double u_star,
                                      double eps, double zeta, double phi_min,
                                      double phi_max) {
    if (phi_prev.size() != u_tilde.size())
        throw ConfigError("update_modulation: length mismatch");
    if (zeta < 0.0 || zeta > 1.0) throw ConfigError("update_modulation: zeta outside [0,1]");
    if (!(eps > 0.0)) throw ConfigError("update_modulation: eps must be positive");
    std::vector<double> out(phi_prev.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double target = std::tanh(u_star / (u_tilde[i] + eps) - 1.0);
        double v = (1.0 - zeta) * target + zeta * phi_prev[i];
        v = std::min(std::max(v, phi_min), phi_max);
        out[i] = v;
    }
    return out;
}

Rng client_train_stream(std::uint64_t seed, std::size_t round, std::size_t client_id) {
    return Rng(seed).child(0xC11E).child(round).child(client_id);
}

}  // namespace ubsmoe
