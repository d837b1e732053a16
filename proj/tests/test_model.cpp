#include <doctest.h>

#include <cmath>

#include "ubsmoe/kernels.hpp"
#include "ubsmoe/model.hpp"

using namespace ubsmoe;

namespace {

// replay the recorded decisions with current parameters (differentiable map)
double frozen_model_loss(const Model& m, const SampleTape& tape, std::span<const double> x,
                         std::span<const double> y, TaskKind kind, std::size_t /*k_c*/) {
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t li = 0; li < m.layers.size(); ++li)
        h = smoe_forward_frozen_sets(m.layers[li], h, tape.decisions[li]);
    std::vector<double> out = matvec(m.head.w, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m.head.bias[i];
    return task_loss(kind, out, y, nullptr);
}

}  // namespace

TEST_CASE("task loss values and gradients") {
    std::vector<double> dout;
    const double lr = task_loss(TaskKind::ClusterRegression, std::vector<double>{1.0, -2.0},
                                std::vector<double>{0.5, 0.0}, &dout);
    CHECK(lr == doctest::Approx(0.5 * (0.25 + 4.0)));
    CHECK(dout[0] == doctest::Approx(0.5));
    CHECK(dout[1] == doctest::Approx(-2.0));

    const double lc = task_loss(TaskKind::ClusterClassification,
                                std::vector<double>{2.0, 0.0, 0.0},
                                std::vector<double>{1.0, 0.0, 0.0}, &dout);
    auto p = softmax(std::vector<double>{2.0, 0.0, 0.0});
    CHECK(lc == doctest::Approx(-std::log(p[0])));
    CHECK(dout[0] == doctest::Approx(p[0] - 1.0));
    CHECK(dout[1] == doctest::Approx(p[1]));
}

TEST_CASE("stacked model gradients match finite differences") {
    ModelInit init;
    init.input_dim = 5;
    init.hidden_dim = 4;
    init.num_layers = 2;
    init.num_experts = 4;
    init.rank = 2;
    init.alpha = 2.0;
    init.output_dim = 3;
    Model m = init_model(init, Rng(77));
    // move adapters off the zero-B start so every gradient is live
    Rng rng(78);
    for (auto& layer : m.layers)
        for (auto& e : layer.experts)
            for (double& v : e.adapter.b.data) v = 0.3 * rng.next_normal();

    std::vector<double> x(init.input_dim), y(init.output_dim);
    for (double& v : x) v = rng.next_normal();
    for (double& v : y) v = rng.next_normal();

    const std::size_t k_c = 2, n_p = 3;
    SampleTape tape = model_forward(m, x, k_c, n_p);
    std::vector<double> dout;
    task_loss(TaskKind::ClusterRegression, tape.output, y, &dout);
    ModelGradients g = zero_model_gradients(m);
    model_backward(m, tape, dout, 1.0, g);

    const double h = 1e-6;
    auto fd_at = [&](double* slot) {
        const double orig = *slot;
        *slot = orig + h;
        const double up = frozen_model_loss(m, tape, x, y, TaskKind::ClusterRegression, k_c);
        *slot = orig - h;
        const double dn = frozen_model_loss(m, tape, x, y, TaskKind::ClusterRegression, k_c);
        *slot = orig;
        return (up - dn) / (2.0 * h);
    };
    auto check_tensor = [&](std::vector<double>& params, const std::vector<double>& grad) {
        Rng pick(91);
        for (int probe = 0; probe < 8 && probe < int(params.size()); ++probe) {
            const std::size_t i = pick.next_below(params.size());
            const double fd = fd_at(&params[i]);
            CHECK(std::abs(grad[i] - fd) <= 2e-5 * std::max(1.0, std::abs(fd)));
        }
    };

    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        for (std::size_t e = 0; e < m.layers[li].experts.size(); ++e) {
            check_tensor(m.layers[li].experts[e].adapter.b.data, g.layers[li].experts[e].db.data);
            check_tensor(m.layers[li].experts[e].adapter.a.data, g.layers[li].experts[e].da.data);
        }
        check_tensor(m.layers[li].router_w.data, g.layers[li].router.data);
        check_tensor(m.layers[li].phi, g.layers[li].phi);
    }
    check_tensor(m.head.w.data, g.head_w.data);
    check_tensor(m.head.bias, g.head_bias);
}

TEST_CASE("apply_sgd leaves the frozen base untouched and phi optional") {
    ModelInit init;
    init.num_layers = 1;
    init.num_experts = 3;
    Model m = init_model(init, Rng(5));
    Model before = m;
    ModelGradients g = zero_model_gradients(m);
    for (auto& lg : g.layers) {
        for (auto& eg : lg.experts) {
            eg.db.fill(1.0);
            eg.da.fill(1.0);
        }
        lg.router.fill(1.0);
        lg.phi.assign(lg.phi.size(), 1.0);
    }
    apply_sgd(m, g, 0.1, /*update_phi=*/false);
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        for (std::size_t e = 0; e < m.layers[li].experts.size(); ++e)
            CHECK(m.layers[li].experts[e].w0.data == before.layers[li].experts[e].w0.data);
        CHECK(m.layers[li].phi == before.layers[li].phi);
        CHECK(m.layers[li].router_w.data != before.layers[li].router_w.data);
    }
}
