#include "ubsmoe/model.hpp"

#include <cmath>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/kernels.hpp"

namespace ubsmoe {

namespace {

void fill_uniform(Matrix& m, double half_width, Rng& rng) {
    for (double& v : m.data) v = rng.next_uniform(-half_width, half_width);
}

void fill_normal(Matrix& m, double scale, Rng& rng) {
    for (double& v : m.data) v = scale * rng.next_normal();
}

}  // namespace

Model init_model(const ModelInit& init, Rng rng) {
    if (init.num_layers < 1 || init.num_experts < 1 || init.rank < 1)
        throw ConfigError("init_model: layers, experts, and rank must be >= 1");
    Model m;
    for (std::size_t li = 0; li < init.num_layers; ++li) {
        const std::size_t d_in = (li == 0) ? init.input_dim : init.hidden_dim;
        const std::size_t d_out = init.hidden_dim;
        if (init.rank > std::min(d_in, d_out))
            throw ConfigError("init_model: rank exceeds min(d, l)");
        Rng lr = rng.child(0x10 + li);
        SmoeLayerParams layer;
        layer.layer_index = li;
        layer.router_w = Matrix(init.num_experts, d_in);
        fill_uniform(layer.router_w, init.router_scale / std::sqrt(double(d_in)), lr);
        layer.phi.assign(init.num_experts, 0.0);
        for (std::size_t e = 0; e < init.num_experts; ++e) {
            Rng er = lr.child(e);
            Expert ex;
            ex.w0 = Matrix(d_in, d_out);
            fill_normal(ex.w0, init.w0_scale / std::sqrt(double(d_in)), er);
            ex.adapter.rank = init.rank;
            ex.adapter.alpha = init.alpha;
            ex.adapter.b = Matrix(d_in, init.rank);  // zero start: delta-W = 0
            ex.adapter.a = Matrix(init.rank, d_out);
            fill_uniform(ex.adapter.a, 1.0 / std::sqrt(double(d_in)), er);
            layer.experts.push_back(std::move(ex));
        }
        m.layers.push_back(std::move(layer));
    }
    Rng hr = rng.child(0x9000);
    m.head.w = Matrix(init.output_dim, init.hidden_dim);
    fill_uniform(m.head.w, 1.0 / std::sqrt(double(init.hidden_dim)), hr);
    m.head.bias.assign(init.output_dim, 0.0);
    return m;
}

ModelGradients zero_model_gradients(const Model& m) {
    ModelGradients g;
    g.layers.reserve(m.layers.size());
    for (const auto& layer : m.layers) g.layers.push_back(zero_layer_gradients(layer));
    g.head_w = Matrix(m.head.w.rows, m.head.w.cols);
    g.head_bias.assign(m.head.bias.size(), 0.0);
    return g;
}

SampleTape model_forward(const Model& m, std::span<const double> x, std::size_t k_c,
                         std::size_t n_p) {
    SampleTape tape;
    std::vector<double> h(x.begin(), x.end());
    for (const auto& layer : m.layers) {
        tape.layer_inputs.push_back(h);
        auto [y, d] = smoe_forward(layer, h, k_c, n_p);
        tape.decisions.push_back(std::move(d));
        h = std::move(y);
    }
    tape.output = matvec(m.head.w, h);
    for (std::size_t i = 0; i < tape.output.size(); ++i) tape.output[i] += m.head.bias[i];
    // keep the head input around for the head gradient
    tape.layer_inputs.push_back(std::move(h));
    return tape;
}

double task_loss(TaskKind kind, std::span<const double> out, std::span<const double> y,
                 std::vector<double>* dout) {
    if (out.size() != y.size()) throw ConfigError("task_loss: output/target size mismatch");
    if (kind == TaskKind::ClusterRegression) {
        double loss = 0.0;
        if (dout) dout->assign(out.size(), 0.0);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double r = out[i] - y[i];
            loss += 0.5 * r * r;
            if (dout) (*dout)[i] = r;
        }
        return loss;
    }
    // classification: y is one-hot
    std::vector<double> p = softmax(out);
    std::size_t label = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] > y[label]) label = i;
    const double loss = -std::log(std::max(p[label], 1e-300));
    if (dout) {
        dout->assign(p.begin(), p.end());
        (*dout)[label] -= 1.0;
    }
    return loss;
}

void model_backward(const Model& m, const SampleTape& tape, std::span<const double> dout,
                    double scale, ModelGradients& g) {
    const std::size_t n_layers = m.layers.size();
    if (tape.decisions.size() != n_layers || tape.layer_inputs.size() != n_layers + 1)
        throw ConfigError("model_backward: tape does not match model");

    const std::vector<double>& head_in = tape.layer_inputs[n_layers];
    add_outer(g.head_w, scale, dout, head_in);
    kern::axpy(g.head_bias.data(), scale, dout.data(), dout.size());

    // upstream into the last layer: scale * head.w^T dout
    std::vector<double> up(head_in.size(), 0.0);
    add_transposed_matvec(m.head.w, dout, scale, up);

    for (std::size_t li = n_layers; li-- > 0;) {
        std::vector<double> down;
        LayerGradients lg = smoe_backward(m.layers[li], tape.layer_inputs[li],
                                          tape.decisions[li], up,
                                          li > 0 ? &down : nullptr);
        LayerGradients& acc = g.layers[li];
        for (std::size_t e = 0; e < lg.experts.size(); ++e) {
            kern::axpy(acc.experts[e].db.data.data(), 1.0, lg.experts[e].db.data.data(),
                       lg.experts[e].db.data.size());
            kern::axpy(acc.experts[e].da.data.data(), 1.0, lg.experts[e].da.data.data(),
                       lg.experts[e].da.data.size());
        }
        kern::axpy(acc.router.data.data(), 1.0, lg.router.data.data(), lg.router.data.size());
        kern::axpy(acc.phi.data(), 1.0, lg.phi.data(), lg.phi.size());
        if (li > 0) up = std::move(down);
    }
}

void apply_sgd(Model& m, const ModelGradients& g, double eta, bool update_phi) {
    if (eta == 0.0) return;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        SmoeLayerParams& layer = m.layers[li];
        const LayerGradients& lg = g.layers[li];
        for (std::size_t e = 0; e < layer.experts.size(); ++e) {
            kern::axpy(layer.experts[e].adapter.b.data.data(), -eta,
                       lg.experts[e].db.data.data(), lg.experts[e].db.data.size());
            kern::axpy(layer.experts[e].adapter.a.data.data(), -eta,
                       lg.experts[e].da.data.data(), lg.experts[e].da.data.size());
        }
        kern::axpy(layer.router_w.data.data(), -eta, lg.router.data.data(),
                   lg.router.data.size());
        if (update_phi) kern::axpy(layer.phi.data(), -eta, lg.phi.data(), lg.phi.size());
    }
    kern::axpy(m.head.w.data.data(), -eta, g.head_w.data.data(), g.head_w.data.size());
    kern::axpy(m.head.bias.data(), -eta, g.head_bias.data(), g.head_bias.size());
}

}  // namespace ubsmoe
