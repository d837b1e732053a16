#include "ubsmoe/costmodel.hpp"

#include <algorithm>

#include "ubsmoe/errors.hpp"

namespace ubsmoe::cost {

namespace {

double tokens_per_round(const ModelDims& dims) {
    return double(dims.gamma) * double(dims.batch) * double(dims.seq);
}

double check_kc(const ModelDims& dims, std::size_t k_c) {
    if (k_c < 1 || k_c > dims.experts)
        throw ConfigError("costmodel: k_c out of [1, M]");
    return double(k_c);
}

}  // namespace

double expert_component_flops(const ModelDims& dims, std::size_t k_c) {
    const double k = check_kc(dims, k_c);
    return kFlopsPerMac * kFwdBwd * tokens_per_round(dims) * double(dims.layers) * k *
           double(dims.d) * double(dims.l);
}

double client_cost_ubsmoe(const ModelDims& dims, std::size_t k_c) {
    const double k = check_kc(dims, k_c);
    const double per_token_layer =
        double(dims.experts) * double(dims.d) + k * double(dims.d) * double(dims.l);
    const double adapter_term = double(dims.gamma) * double(dims.layers) *
                                double(dims.experts) * double(dims.rank) *
                                (double(dims.d) + double(dims.l));
    return kFlopsPerMac * kFwdBwd *
           (tokens_per_round(dims) * double(dims.layers) * per_token_layer + adapter_term);
}

double client_cost_ubsmoe_end_to_end(const ModelDims& dims, std::size_t k_c) {
    const double d = double(dims.d);
    const double attn_per_token_layer = 4.0 * d * d + 2.0 * double(dims.seq) * d;
    const double head_per_token = double(dims.vocab) * d;
    const double dense = kFlopsPerMac * kFwdBwd * tokens_per_round(dims) *
                         (double(dims.layers) * attn_per_token_layer + head_per_token);
    return client_cost_ubsmoe(dims, k_c) + dense;
}

double client_cost_lora_rank(const ModelDims& dims, std::size_t r_c, Method method) {
    // r_c == 0 is the degenerate limit: pure dense-FFN cost, no adapter term
    switch (method) {
        case Method::Flora:
        case Method::FlexLora:
        case Method::Florist:
        case Method::HetLora:
            break;
        default:
            throw ConfigError("costmodel: not a LoRA-rank method");
    }
    const double per_token_layer =
        double(dims.d) * double(dims.l) + double(r_c) * (double(dims.d) + double(dims.l));
    double flops = kFlopsPerMac * kFwdBwd * tokens_per_round(dims) * double(dims.layers) *
                   per_token_layer;
    if (method == Method::HetLora)
        flops += double(dims.layers) * double(r_c) * (double(dims.d) + double(dims.l));
    return flops;
}

double comm_cost_dominant(const ModelDims& dims, Method method, Direction dir,
                          std::size_t r_c) {
    const double adapters = double(dims.layers) * double(dims.experts) * double(dims.rank) *
                            (double(dims.d) + double(dims.l));
    const double lora = double(dims.layers) * double(r_c) * (double(dims.d) + double(dims.l));
    switch (method) {
        case Method::UbSmoe:
            return dir == Direction::Download ? 2.0 * adapters : adapters;
        case Method::A3Smoe:
            return adapters;
        case Method::Flora:
        case Method::HetLora:
        case Method::FlexLora:
        case Method::Florist:
            if (r_c < 1) throw ConfigError("costmodel: LoRA-rank comm needs r_c");
            return lora;
    }
    throw ConfigError("costmodel: unknown method");
}

double comm_cost(const ModelDims& dims, Method method, Direction dir, std::size_t r_c,
                 std::size_t truncated_rank) {
    const double L = double(dims.layers);
    const double M = double(dims.experts);
    const double dominant = (method == Method::Florist && dir == Direction::Download)
                                ? L * double(truncated_rank ? truncated_rank : r_c) *
                                      (double(dims.d) + double(dims.l))
                                : comm_cost_dominant(dims, method, dir, r_c);
    switch (method) {
        case Method::UbSmoe:
            // upload adds the utilization statistics, download the modulation vectors
            return dir == Direction::Upload ? dominant + L * (M + 1.0) : dominant + L * M;
        case Method::A3Smoe:
            return dir == Direction::Upload ? dominant + L * M : dominant;
        default:
            return dominant;
    }
}

double server_cost(const ModelDims& dims, Method method, std::size_t r_max,
                   std::size_t truncated_rank) {
    if (dims.clients == 0) return 0.0;
    const double C = double(dims.clients);
    const double L = double(dims.layers);
    const double M = double(dims.experts);
    const double d = double(dims.d);
    const double l = double(dims.l);
    switch (method) {
        case Method::UbSmoe:
            return C * L * M * double(dims.rank) * (d + l) + L * M;
        case Method::A3Smoe:
            return C * L * M * double(dims.rank) * (d + l);
        case Method::Flora:
            return C * L * double(r_max) * (d + l);
        case Method::HetLora:
            return C * L * double(r_max) * d * l;
        case Method::FlexLora:
            return C * L * (d * d * l + double(r_max) * d * l);
        case Method::Florist: {
            // R = sum of client ranks, approximated as C * r_max; p = retained rank
            const double R = C * double(r_max);
            const double p = double(truncated_rank ? truncated_rank : r_max);
            return L * R * R * (d + l + R) + L * p * R * (d + l);
        }
    }
    throw ConfigError("costmodel: unknown method");
}

std::vector<CostRow> build_cost_report(const ModelDims& dims,
                                       const std::vector<std::size_t>& kc_list,
                                       const std::vector<std::size_t>& rc_list) {
    if (kc_list.empty() || rc_list.empty())
        throw ConfigError("costmodel: empty budget list");
    std::size_t r_max = 0;
    for (std::size_t r : rc_list) r_max = std::max(r_max, r);

    std::vector<CostRow> rows;
    for (Method m : {Method::UbSmoe, Method::A3Smoe}) {
        for (std::size_t q = 0; q < kc_list.size(); ++q) {
            CostRow row;
            row.method = m;
            row.budget_index = q;
            row.k_c = kc_list[q];
            row.r_c = dims.rank;
            row.client_flops = client_cost_ubsmoe(dims, kc_list[q]);
            row.client_flops_end_to_end = client_cost_ubsmoe_end_to_end(dims, kc_list[q]);
            row.server_flops = server_cost(dims, m, r_max);
            row.upload_params = comm_cost(dims, m, Direction::Upload);
            row.download_params = comm_cost(dims, m, Direction::Download);
            rows.push_back(row);
        }
    }
    for (Method m : {Method::Flora, Method::HetLora, Method::FlexLora, Method::Florist}) {
        for (std::size_t q = 0; q < rc_list.size(); ++q) {
            CostRow row;
            row.method = m;
            row.budget_index = q;
            row.r_c = rc_list[q];
            row.client_flops = client_cost_lora_rank(dims, rc_list[q], m);
            row.server_flops = server_cost(dims, m, r_max, r_max);
            row.upload_params = comm_cost(dims, m, Direction::Upload, rc_list[q]);
            row.download_params = comm_cost(dims, m, Direction::Download, rc_list[q], r_max);
            rows.push_back(row);
        }
    }
    return rows;
}

const char* method_name(Method m) {
    switch (m) {
        case Method::UbSmoe: return "ub-smoe";
        case Method::A3Smoe: return "a3smoe";
        case Method::Flora: return "flora";
        case Method::HetLora: return "hetlora";
        case Method::FlexLora: return "flexlora";
        case Method::Florist: return "florist";
    }
    return "unknown";
}

}  // namespace ubsmoe::cost
