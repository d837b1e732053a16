#include "ubsmoe/smoe.hpp"

#include <algorithm>
#include <cmath>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/kernels.hpp"

namespace ubsmoe {

bool RoutingDecision::is_candidate(std::size_t i) const {
    return std::find(candidate_set.begin(), candidate_set.end(), i) != candidate_set.end();
}

bool RoutingDecision::is_active(std::size_t i) const {
    return std::find(activation_set.begin(), activation_set.end(), i) != activation_set.end();
}

std::vector<double> expert_forward(const Expert& e, std::span<const double> x) {
    const std::size_t d = e.w0.rows;
    const std::size_t l = e.w0.cols;
    if (x.size() != d) throw ConfigError("expert_forward: input dimension mismatch");
    if (e.adapter.b.rows != d || e.adapter.b.cols != e.adapter.rank ||
        e.adapter.a.rows != e.adapter.rank || e.adapter.a.cols != l)
        throw ConfigError("expert_forward: adapter shape mismatch");

    std::vector<double> y(l, 0.0);
    add_transposed_matvec(e.w0, x, 1.0, y);
    // low-rank path: y += (alpha/rank) * a^T (b^T x)
    std::vector<double> t(e.adapter.rank, 0.0);
    add_transposed_matvec(e.adapter.b, x, 1.0, t);
    const double s = e.adapter.alpha / static_cast<double>(e.adapter.rank);
    add_transposed_matvec(e.adapter.a, t, s, y);
    return y;
}

namespace {

void check_routing_args(const SmoeLayerParams& p, std::span<const double> x, std::size_t k_c,
                        std::size_t n_p) {
    const std::size_t m = p.num_experts();
    if (m == 0) throw ConfigError("route: layer has no experts");
    if (p.router_w.rows != m) throw ConfigError("route: router row count != experts");
    if (p.phi.size() != m) throw ConfigError("route: phi length != experts");
    if (x.size() != p.router_w.cols) throw ConfigError("route: input dimension mismatch");
    if (k_c < 1 || k_c > m) throw ConfigError("route: k_c out of range");
    if (n_p < k_c) throw ConfigError("route: k_c exceeds candidate size n_p");
    if (n_p > m) throw ConfigError("route: n_p exceeds expert count");
}

}  // namespace

RoutingDecision route_dmr(const SmoeLayerParams& p, std::span<const double> x, std::size_t k_c,
                          std::size_t n_p) {
    check_routing_args(p, x, k_c, n_p);
    RoutingDecision d;
    d.raw_scores = matvec(p.router_w, x);
    d.candidate_set = topk_indices(d.raw_scores, n_p);
    d.modulated_scores = d.raw_scores;
    for (std::size_t i : d.candidate_set) d.modulated_scores[i] += p.phi[i];
    d.activation_set = topk_indices(d.modulated_scores, k_c);
    d.gate_weights = restricted_softmax(d.modulated_scores, d.activation_set);
    return d;
}

RoutingDecision route_topk(const SmoeLayerParams& p, std::span<const double> x,
                           std::size_t k_c) {
    check_routing_args(p, x, k_c, p.num_experts());
    RoutingDecision d;
    d.raw_scores = matvec(p.router_w, x);
    d.modulated_scores = d.raw_scores;
    d.activation_set = topk_indices(d.raw_scores, k_c);
    d.gate_weights = restricted_softmax(d.raw_scores, d.activation_set);
    return d;
}

std::pair<std::vector<double>, RoutingDecision> smoe_forward(const SmoeLayerParams& p,
                                                             std::span<const double> x,
                                                             std::size_t k_c,
                                                             std::size_t n_p) {
    RoutingDecision d = route_dmr(p, x, k_c, n_p);
    std::vector<double> y(p.output_dim(), 0.0);
    for (std::size_t i : d.activation_set) {
        std::vector<double> e = expert_forward(p.experts[i], x);
        kern::axpy(y.data(), d.gate_weights[i], e.data(), e.size());
    }
    return {std::move(y), std::move(d)};
}

std::vector<double> smoe_forward_frozen_sets(const SmoeLayerParams& p,
                                             std::span<const double> x,
                                             const RoutingDecision& sets) {
    std::vector<double> s = matvec(p.router_w, x);
    std::vector<double> m = s;
    for (std::size_t i : sets.candidate_set) m[i] += p.phi[i];
    std::vector<double> gate = restricted_softmax(m, sets.activation_set);
    std::vector<double> y(p.output_dim(), 0.0);
    for (std::size_t i : sets.activation_set) {
        std::vector<double> e = expert_forward(p.experts[i], x);
        kern::axpy(y.data(), gate[i], e.data(), e.size());
    }
    return y;
}

LayerGradients zero_layer_gradients(const SmoeLayerParams& p) {
    LayerGradients g;
    g.experts.reserve(p.num_experts());
    for (const Expert& e : p.experts) {
        AdapterGradient ag;
        ag.db = Matrix(e.adapter.b.rows, e.adapter.b.cols);
        ag.da = Matrix(e.adapter.a.rows, e.adapter.a.cols);
        g.experts.push_back(std::move(ag));
    }
    g.router = Matrix(p.router_w.rows, p.router_w.cols);
    g.phi.assign(p.num_experts(), 0.0);
    return g;
}

LayerGradients smoe_backward(const SmoeLayerParams& p, std::span<const double> x,
                             const RoutingDecision& d, std::span<const double> upstream,
                             std::vector<double>* input_grad) {
    const std::size_t m = p.num_experts();
    if (d.gate_weights.size() != m || d.raw_scores.size() != m)
        throw ConfigError("smoe_backward: stale decision (expert count mismatch)");
    if (x.size() != p.input_dim() || upstream.size() != p.output_dim())
        throw ConfigError("smoe_backward: vector dimension mismatch");

    LayerGradients g = zero_layer_gradients(p);
    if (input_grad) input_grad->assign(x.size(), 0.0);

    // e_i = <upstream, E_i(x)> for activated experts, and the gate-weighted
    // mixture value needed for the softmax jacobian.
    std::vector<double> expert_dot(m, 0.0);
    double mix = 0.0;
    for (std::size_t i : d.activation_set) {
        std::vector<double> ei = expert_forward(p.experts[i], x);
        expert_dot[i] = kern::dot(upstream.data(), ei.data(), ei.size());
        mix += d.gate_weights[i] * expert_dot[i];
    }

    for (std::size_t i : d.activation_set) {
        const double gamma = d.gate_weights[i];
        // dL/dm_i through the restricted softmax
        const double dm = gamma * (expert_dot[i] - mix);
        kern::axpy(g.router.row(i), dm, x.data(), x.size());
        if (d.is_candidate(i)) g.phi[i] = dm;
        if (input_grad) kern::axpy(input_grad->data(), dm, p.router_w.row(i), x.size());

        // adapter gradients for the loss term gamma * <upstream, E_i(x)>
        const ExpertAdapter& ad = p.experts[i].adapter;
        const double s = ad.alpha / static_cast<double>(ad.rank);
        std::vector<double> t(ad.rank, 0.0);
        add_transposed_matvec(ad.b, x, 1.0, t);  // t = b^T x
        std::vector<double> q(ad.rank, 0.0);
        for (std::size_t k = 0; k < ad.rank; ++k)
            q[k] = kern::dot(ad.a.row(k), upstream.data(), upstream.size());  // q = a u
        add_outer(g.experts[i].db, gamma * s, x, q);
        add_outer(g.experts[i].da, gamma * s, t, upstream);

        if (input_grad) {
            // gamma * d<u, E_i(x)>/dx = gamma * (w0 u + s * b (a u))
            std::vector<double>& ig = *input_grad;
            for (std::size_t r = 0; r < p.experts[i].w0.rows; ++r)
                ig[r] += gamma * kern::dot(p.experts[i].w0.row(r), upstream.data(),
                                           upstream.size());
            for (std::size_t r = 0; r < ad.b.rows; ++r)
                ig[r] += gamma * s * kern::dot(ad.b.row(r), q.data(), q.size());
        }
    }
    return g;
}

std::pair<double, std::vector<double>> phi_regularization_loss(std::span<const double> phi,
                                                               double phi_min, double phi_max,
                                                               double lambda) {
    if (!(phi_min < phi_max)) throw ConfigError("phi_regularization_loss: phi_min >= phi_max");
    double loss = 0.0;
    std::vector<double> grad(phi.size(), 0.0);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        const double lo = phi_min - phi[i];
        const double hi = phi[i] - phi_max;
        if (lo > 0.0) {
            loss += lambda * lo * lo;
            grad[i] = -2.0 * lambda * lo;
        } else if (hi > 0.0) {
            loss += lambda * hi * hi;
            grad[i] = 2.0 * lambda * hi;
        }
    }
    return {loss, std::move(grad)};
}

}  // namespace ubsmoe
