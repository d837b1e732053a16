#pragma once

// Analytic computation/communication cost calculator for the heterogeneous
// sparsity and heterogeneous LoRA-rank method families.
//
// Conventions (unit leading constants, documented once here):
//   - matmul work is counted in MACs; FLOPs = 2 * MACs.
//   - forward + backward multiplies every per-token matmul term by 3
//     (backward costs roughly twice the forward pass).
//   - the sparse-expert term is k_c * d * l MACs per token per layer; the
//     dense-FFN term of LoRA-rank methods is d * l per token per layer.
//   - the end-to-end client cost adds the budget-independent dense stack:
//     attention projections 4*d^2, attention scores 2*seq*d per token-layer,
//     and an output head vocab*d per token.
//   - the HetLoRA rank self-pruning term L * r_c * (d + l) is added with a
//     unit constant (no multipliers).
// Communication costs are raw parameter counts (no multipliers).

#include <cstddef>
#include <vector>

namespace ubsmoe::cost {

struct ModelDims {
    std::size_t d = 2048;       // hidden dim
    std::size_t l = 2048;       // FFN intermediate dim
    std::size_t layers = 16;    // L
    std::size_t experts = 64;   // M
    std::size_t rank = 20;      // r (fixed rank for sparsity methods)
    std::size_t gamma = 1;      // local iterations per round
    std::size_t batch = 1;      // sequences per iteration
    std::size_t seq = 256;      // tokens per sequence
    std::size_t clients = 8;    // C
    std::size_t vocab = 50304;  // output head width (end-to-end cost only)
};

enum class Method { UbSmoe, A3Smoe, Flora, HetLora, FlexLora, Florist };
enum class Direction { Upload, Download };

constexpr double kFlopsPerMac = 2.0;
constexpr double kFwdBwd = 3.0;

// Per-round FLOPs of the sparse-expert component alone: the K_c * d * l term.
double expert_component_flops(const ModelDims& dims, std::size_t k_c);

// Per-round client FLOPs of the MoE path: router M*d and expert K_c*d*l per
// token-layer, plus the per-iteration adapter maintenance term L*M*r*(d+l).
double client_cost_ubsmoe(const ModelDims& dims, std::size_t k_c);

// client_cost_ubsmoe plus the budget-independent dense stack (attention and
// output head).
double client_cost_ubsmoe_end_to_end(const ModelDims& dims, std::size_t k_c);

// Per-round client FLOPs of a heterogeneous LoRA-rank method: dense FFN d*l
// plus adapters r_c*(d+l) per token-layer; HetLoRA adds its pruning term.
// r_c = 0 is the degenerate limit and costs the dense FFN alone.
double client_cost_lora_rank(const ModelDims& dims, std::size_t r_c, Method method);

// Parameter counts moved per client per round.
double comm_cost(const ModelDims& dims, Method method, Direction dir, std::size_t r_c = 0,
                 std::size_t truncated_rank = 0);

// Only the dominant adapter-payload term of comm_cost (for exact ratios).
double comm_cost_dominant(const ModelDims& dims, Method method, Direction dir,
                          std::size_t r_c = 0);

// Per-round server FLOPs. r_max is the largest client rank (LoRA-rank
// methods); truncated_rank is FLoRIST's retained rank p. Zero clients cost
// zero (no round happens).
double server_cost(const ModelDims& dims, Method method, std::size_t r_max = 0,
                   std::size_t truncated_rank = 0);

const char* method_name(Method m);

struct CostRow {
    Method method;
    std::size_t budget_index = 0;  // position in the budget ladder
    std::size_t k_c = 0;           // sparsity methods
    std::size_t r_c = 0;           // LoRA-rank methods (adapter rank otherwise)
    double client_flops = 0.0;
    double client_flops_end_to_end = 0.0;  // sparsity methods only
    double server_flops = 0.0;
    double upload_params = 0.0;
    double download_params = 0.0;
};

// Full method x budget table: sparsity methods across kc_list, LoRA-rank
// methods across rc_list (r_max = max of rc_list).
std::vector<CostRow> build_cost_report(const ModelDims& dims,
                                       const std::vector<std::size_t>& kc_list,
                                       const std::vector<std::size_t>& rc_list);

}  // namespace ubsmoe::cost
