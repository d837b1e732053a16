#pragma once

// A stack of SMoE layers with a linear task head. Layer 0 maps the input
// dimension d to l; deeper layers map l to l. The head maps l to the task
// output dimension. Experts are linear, so the only nonlinearity is the
// routing switch itself.

#include <cstddef>
#include <span>
#include <vector>

#include "ubsmoe/rng.hpp"
#include "ubsmoe/smoe.hpp"

namespace ubsmoe {

enum class TaskKind { ClusterRegression, ClusterClassification };

struct TaskHead {
    Matrix w;                  // out x l
    std::vector<double> bias;  // out
};

struct Model {
    std::vector<SmoeLayerParams> layers;
    TaskHead head;

    std::size_t num_layers() const { return layers.size(); }
    std::size_t num_experts() const { return layers.empty() ? 0 : layers[0].num_experts(); }
};

struct ModelGradients {
    std::vector<LayerGradients> layers;
    Matrix head_w;
    std::vector<double> head_bias;
};

struct ModelInit {
    std::size_t input_dim = 8;
    std::size_t hidden_dim = 8;  // l
    std::size_t num_layers = 1;
    std::size_t num_experts = 4;
    std::size_t rank = 2;
    double alpha = 2.0;  // defaults to rank so alpha/rank = 1
    std::size_t output_dim = 1;
    double w0_scale = 1.0;      // multiplier on 1/sqrt(fan_in)
    double router_scale = 1.0;  // multiplier on 1/sqrt(fan_in)
};

// Seeded initialization: w0 ~ scaled normal (frozen), adapter b = 0,
// adapter a ~ uniform(-1/sqrt(d), 1/sqrt(d)), router ~ scaled uniform,
// head ~ uniform(-1/sqrt(l), 1/sqrt(l)) with zero bias.
Model init_model(const ModelInit& init, Rng rng);

ModelGradients zero_model_gradients(const Model& m);

struct SampleTape {
    std::vector<std::vector<double>> layer_inputs;  // input to each layer
    std::vector<RoutingDecision> decisions;
    std::vector<double> output;  // head output
};

// Forward through all layers and the head.
SampleTape model_forward(const Model& m, std::span<const double> x, std::size_t k_c,
                         std::size_t n_p);

// Task loss and its gradient with respect to the head output.
// Regression: 0.5 * ||out - y||^2. Classification: softmax cross-entropy
// where y is a one-hot vector.
double task_loss(TaskKind kind, std::span<const double> out, std::span<const double> y,
                 std::vector<double>* dout);

// Accumulates gradients of `scale * loss(out)` into g given dL/dout.
void model_backward(const Model& m, const SampleTape& tape, std::span<const double> dout,
                    double scale, ModelGradients& g);

// theta -= eta * grad for every trainable tensor. Frozen w0 is untouched.
// phi is updated only when update_phi is set.
void apply_sgd(Model& m, const ModelGradients& g, double eta, bool update_phi);

}  // namespace ubsmoe
