#pragma once

// Sparse Mixture-of-Experts layer: linear experts (frozen base weight plus a
// trainable low-rank adapter), a linear router, dynamic modulated routing,
// and manual forward/backward with the Top-K selection treated as constant.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ubsmoe/matrix.hpp"

namespace ubsmoe {

struct ExpertAdapter {
    Matrix b;      // d x r, zero-initialized
    Matrix a;      // r x l
    double alpha;  // scaling; effective update is (alpha/rank) * b * a
    std::size_t rank;
};

struct Expert {
    Matrix w0;  // d x l, frozen; never mutated by training
    ExpertAdapter adapter;
};

struct SmoeLayerParams {
    std::vector<Expert> experts;  // size M >= 2 in full layers
    Matrix router_w;              // M x d
    std::vector<double> phi;      // length M, modulation
    std::size_t layer_index = 0;

    std::size_t num_experts() const { return experts.size(); }
    std::size_t input_dim() const { return router_w.cols; }
    std::size_t output_dim() const { return experts.empty() ? 0 : experts[0].w0.cols; }
};

struct RoutingDecision {
    std::vector<std::size_t> candidate_set;   // top-Np of raw scores, rank order
    std::vector<std::size_t> activation_set;  // top-Kc of modulated scores, rank order
    std::vector<double> gate_weights;         // length M; zero off the activation set
    std::vector<double> raw_scores;           // length M, s = router_w * x
    std::vector<double> modulated_scores;     // length M, m

    bool is_candidate(std::size_t i) const;
    bool is_active(std::size_t i) const;
};

struct AdapterGradient {
    Matrix db;  // d x r
    Matrix da;  // r x l
    bool pseudo = false;  // set when filled by pseudo-gradient injection
};

struct LayerGradients {
    std::vector<AdapterGradient> experts;
    Matrix router;            // M x d
    std::vector<double> phi;  // length M
};

// (w0 + (alpha/rank) * b * a)^T x; x has length d, result length l.
std::vector<double> expert_forward(const Expert& e, std::span<const double> x);

// Dynamic modulated routing: s = router_w * x, candidate set = top-n_p of s,
// m adds phi on the candidate set only, activation set = top-k_c of m, gate
// weights = softmax of m restricted to the activation set.
RoutingDecision route_dmr(const SmoeLayerParams& p, std::span<const double> x,
                          std::size_t k_c, std::size_t n_p);

// Vanilla Top-K routing on raw scores (no candidate set, no modulation).
RoutingDecision route_topk(const SmoeLayerParams& p, std::span<const double> x,
                           std::size_t k_c);

std::pair<std::vector<double>, RoutingDecision> smoe_forward(const SmoeLayerParams& p,
                                                             std::span<const double> x,
                                                             std::size_t k_c,
                                                             std::size_t n_p);

// Forward pass reusing the selection sets of a previous decision while
// recomputing scores, modulated logits, and gate weights from the current
// parameters. This is the differentiable map the backward pass and the
// finite-difference oracle both see.
std::vector<double> smoe_forward_frozen_sets(const SmoeLayerParams& p,
                                             std::span<const double> x,
                                             const RoutingDecision& sets);

// Gradients of <upstream, y> with the activation set held fixed. Adapter
// gradients of non-activated experts are exactly zero; phi receives gradient
// only through candidate-set entries that feed activated gates. If input_grad
// is non-null it receives d<upstream, y>/dx.
LayerGradients smoe_backward(const SmoeLayerParams& p, std::span<const double> x,
                             const RoutingDecision& d, std::span<const double> upstream,
                             std::vector<double>* input_grad = nullptr);

// loss = lambda * (||relu(phi_min - phi)||^2 + ||relu(phi - phi_max)||^2)
// and its analytic gradient; zero inside [phi_min, phi_max].
std::pair<double, std::vector<double>> phi_regularization_loss(std::span<const double> phi,
                                                               double phi_min, double phi_max,
                                                               double lambda);

LayerGradients zero_layer_gradients(const SmoeLayerParams& p);

}  // namespace ubsmoe
