#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/run.hpp"

namespace ubsmoe {

using json = nlohmann::ordered_json;

namespace {

// shortest round-trip decimal representation, locale-independent
void emit_double(std::ostream& os, double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    os.write(buf, p - buf);
}

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols)
        throw ConfigError("checkpoint: matrix data length mismatch");
    return m;
}

}  // namespace

void write_metrics_csv(const RunResult& result, std::ostream& os) {
    os << "round";
    for (std::size_t q = 0; q < result.tier_betas.size(); ++q) os << ",loss_b" << (q + 1);
    const std::size_t n_layers = result.state.global.layers.size();
    for (std::size_t li = 0; li < n_layers; ++li) os << ",entropy_l" << (li + 1);
    os << ",entropy_mean,gini_mean,pearson_r\n";
    for (const RoundMetrics& rm : result.rounds) {
        os << rm.round;
        for (double v : rm.loss_by_tier) {
            os << ",";
            emit_double(os, v);
        }
        for (double v : rm.entropy_per_layer) {
            os << ",";
            emit_double(os, v);
        }
        os << ",";
        emit_double(os, rm.entropy_mean);
        os << ",";
        emit_double(os, rm.gini_mean);
        os << ",";
        emit_double(os, rm.pearson_phi_util);
        os << "\n";
    }
}

void write_summary_json(const RunConfig& cfg, const RunResult& result, std::ostream& os) {
    json j;
    j["config"] = json::parse(serialize_config(cfg));
    j["seed"] = cfg.seed;
    j["rounds_completed"] = result.rounds.size();
    j["k_bar"] = result.state.k_bar;
    j["u_star"] = result.state.u_star;
    j["tier_betas"] = result.tier_betas;

    json clients = json::array();
    for (const auto& p : result.profiles)
        clients.push_back({{"id", p.id},
                           {"beta", p.beta},
                           {"k_c", p.k_c},
                           {"p_c", p.p_c},
                           {"rho_c", p.rho_c},
                           {"shard_size", p.shard.size()}});
    j["clients"] = clients;

    auto safe = [](double v) -> json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    if (!result.rounds.empty()) {
        const RoundMetrics& last = result.rounds.back();
        json tier_losses = json::array();
        for (double v : last.loss_by_tier) tier_losses.push_back(safe(v));
        j["final"] = {{"round", last.round},
                      {"loss_by_tier", tier_losses},
                      {"loss_weighted_mean", last.loss_weighted_mean},
                      {"entropy_per_layer", last.entropy_per_layer},
                      {"entropy_mean", last.entropy_mean},
                      {"gini_per_layer", last.gini_per_layer},
                      {"gini_mean", last.gini_mean},
                      {"pearson_phi_util", safe(last.pearson_phi_util)},
                      {"flops_per_client", last.flops_per_client}};
    } else {
        j["final"] = nullptr;
    }
    j["checks"] = {{"max_gate_weight_error", result.max_gate_err},
                   {"max_utilization_sum_error", result.max_util_sum_err}};
    j["wall_time_sec"] = result.wall_time_sec;
    os << j.dump(2) << "\n";
}

void save_checkpoint(const ServerState& state, std::ostream& os) {
    json j;
    j["round"] = state.round;
    j["k_bar"] = state.k_bar;
    j["u_star"] = state.u_star;
    const Hyper& h = state.hyper;
    j["hyper"] = {{"eta", h.eta},
                  {"gamma", h.gamma},
                  {"batch_size", h.batch_size},
                  {"zeta", h.zeta},
                  {"eps", h.eps},
                  {"lambda", h.lambda},
                  {"phi_min", h.phi_min},
                  {"phi_max", h.phi_max},
                  {"n_p", h.n_p},
                  {"pg_enabled", h.pg_enabled},
                  {"pg_clip", h.pg_clip},
                  {"dmr_enabled", h.dmr_enabled},
                  {"phi_upload", h.phi_upload == PhiUpload::Keep ? "keep" : "discard"},
                  {"task_kind", h.task_kind == TaskKind::ClusterRegression ? 0 : 1}};

    json layers = json::array();
    for (const auto& layer : state.global.layers) {
        json experts = json::array();
        for (const auto& e : layer.experts)
            experts.push_back({{"w0", matrix_to_json(e.w0)},
                               {"b", matrix_to_json(e.adapter.b)},
                               {"a", matrix_to_json(e.adapter.a)},
                               {"alpha", e.adapter.alpha},
                               {"rank", e.adapter.rank}});
        layers.push_back({{"layer_index", layer.layer_index},
                          {"experts", experts},
                          {"router_w", matrix_to_json(layer.router_w)},
                          {"phi", layer.phi}});
    }
    j["layers"] = layers;
    j["head"] = {{"w", matrix_to_json(state.global.head.w)}, {"bias", state.global.head.bias}};

    json pg = json::array();
    for (const auto& row : state.pg.layers) {
        json experts = json::array();
        for (const auto& pa : row)
            experts.push_back({{"gb", matrix_to_json(pa.gb)}, {"ga", matrix_to_json(pa.ga)}});
        pg.push_back(experts);
    }
    j["pg"] = {{"clip", state.pg.clip_threshold}, {"layers", pg}};
    j["global_util"] = state.global_util;
    os << j.dump() << "\n";
}

ServerState load_checkpoint(std::istream& is) {
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint: parse error: ") + e.what());
    }
    ServerState state;
    state.round = j.at("round").get<std::size_t>();
    state.k_bar = j.at("k_bar").get<double>();
    state.u_star = j.at("u_star").get<double>();
    const json& h = j.at("hyper");
    state.hyper.eta = h.at("eta").get<double>();
    state.hyper.gamma = h.at("gamma").get<std::size_t>();
    state.hyper.batch_size = h.at("batch_size").get<std::size_t>();
    state.hyper.zeta = h.at("zeta").get<double>();
    state.hyper.eps = h.at("eps").get<double>();
    state.hyper.lambda = h.at("lambda").get<double>();
    state.hyper.phi_min = h.at("phi_min").get<double>();
    state.hyper.phi_max = h.at("phi_max").get<double>();
    state.hyper.n_p = h.at("n_p").get<std::size_t>();
    state.hyper.pg_enabled = h.at("pg_enabled").get<bool>();
    state.hyper.pg_clip = h.at("pg_clip").get<double>();
    state.hyper.dmr_enabled = h.at("dmr_enabled").get<bool>();
    state.hyper.phi_upload =
        h.at("phi_upload").get<std::string>() == "keep" ? PhiUpload::Keep : PhiUpload::Discard;
    state.hyper.task_kind = h.at("task_kind").get<int>() == 0 ? TaskKind::ClusterRegression
                                                              : TaskKind::ClusterClassification;

    for (const json& jl : j.at("layers")) {
        SmoeLayerParams layer;
        layer.layer_index = jl.at("layer_index").get<std::size_t>();
        for (const json& je : jl.at("experts")) {
            Expert e;
            e.w0 = matrix_from_json(je.at("w0"));
            e.adapter.b = matrix_from_json(je.at("b"));
            e.adapter.a = matrix_from_json(je.at("a"));
            e.adapter.alpha = je.at("alpha").get<double>();
            e.adapter.rank = je.at("rank").get<std::size_t>();
            layer.experts.push_back(std::move(e));
        }
        layer.router_w = matrix_from_json(jl.at("router_w"));
        layer.phi = jl.at("phi").get<std::vector<double>>();
        state.global.layers.push_back(std::move(layer));
    }
    state.global.head.w = matrix_from_json(j.at("head").at("w"));
    state.global.head.bias = j.at("head").at("bias").get<std::vector<double>>();

    state.pg.clip_threshold = j.at("pg").at("clip").get<double>();
    for (const json& row : j.at("pg").at("layers")) {
        std::vector<PgAdapter> experts;
        for (const json& je : row) {
            PgAdapter pa;
            pa.gb = matrix_from_json(je.at("gb"));
            pa.ga = matrix_from_json(je.at("ga"));
            experts.push_back(std::move(pa));
        }
        state.pg.layers.push_back(std::move(experts));
    }
    state.global_util = j.at("global_util").get<std::vector<std::vector<double>>>();
    return state;
}

}  // namespace ubsmoe
