#include "ubsmoe/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ubsmoe/errors.hpp"

namespace ubsmoe {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + scope + it.key() + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

TaskKind parse_kind(const std::string& s) {
    if (s == "cluster-regression") return TaskKind::ClusterRegression;
    if (s == "cluster-classification") return TaskKind::ClusterClassification;
    throw ConfigError("config: task.kind must be cluster-regression or cluster-classification");
}

const char* kind_name(TaskKind k) {
    return k == TaskKind::ClusterRegression ? "cluster-regression" : "cluster-classification";
}

PhiUpload parse_phi_upload(const std::string& s) {
    if (s == "keep") return PhiUpload::Keep;
    if (s == "discard") return PhiUpload::Discard;
    throw ConfigError("config: dmr.phi_upload must be keep or discard");
}

}  // namespace

double RunConfig::effective_alpha() const {
    return dims.alpha > 0.0 ? dims.alpha : static_cast<double>(dims.rank);
}

Hyper RunConfig::hyper() const {
    Hyper h;
    h.eta = eta;
    h.gamma = gamma;
    h.batch_size = batch_size;
    h.zeta = zeta;
    h.eps = eps;
    h.lambda = lambda;
    h.phi_min = phi_min;
    h.phi_max = phi_max;
    h.n_p = n_p;
    h.pg_enabled = pg_enabled;
    h.pg_clip = pg_clip;
    h.dmr_enabled = dmr_enabled;
    h.phi_upload = phi_upload;
    h.task_kind = task.kind;
    return h;
}

ModelInit RunConfig::model_init() const {
    ModelInit m;
    m.input_dim = dims.d;
    m.hidden_dim = dims.l;
    m.num_layers = dims.layers;
    m.num_experts = dims.experts;
    m.rank = dims.rank;
    m.alpha = effective_alpha();
    m.output_dim = task.kind == TaskKind::ClusterClassification ? task.num_clusters
                                                                : task.output_dim;
    m.w0_scale = init.w0_scale;
    m.router_scale = init.router_scale;
    return m;
}

TaskSpec RunConfig::task_spec() const {
    TaskSpec t = task;
    t.input_dim = dims.d;
    return t;
}

void validate_config(const RunConfig& cfg) {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (cfg.clients < 1) fail("clients must be >= 1");
    if (cfg.budgets.empty()) fail("budgets must be non-empty");
    for (double b : cfg.budgets)
        if (!(b > 0.0) || b > 1.0) fail("budgets entries must be in (0,1]");
    if (cfg.k_max < 1) fail("k_max must be >= 1");
    if (cfg.n_p < 1) fail("n_p must be >= 1");
    if (cfg.dims.d < 1 || cfg.dims.l < 1) fail("dims.d and dims.l must be >= 1");
    if (cfg.dims.layers < 1) fail("dims.layers must be >= 1");
    if (cfg.dims.experts < 2) fail("dims.experts must be >= 2");
    if (cfg.dims.rank < 1) fail("dims.rank must be >= 1");
    if (cfg.dims.rank > std::min(cfg.dims.d, cfg.dims.l)) fail("dims.rank exceeds min(d, l)");
    if (cfg.dims.alpha < 0.0) fail("dims.alpha must be positive (or omitted)");
    if (cfg.n_p > cfg.dims.experts) fail("n_p exceeds dims.experts");
    for (double b : cfg.budgets) {
        const std::size_t k_c = derive_sparsity(b, cfg.k_max);
        if (k_c > cfg.dims.experts) fail("derived k_c exceeds dims.experts");
        if (cfg.dmr_enabled && k_c > cfg.n_p)
            fail("derived k_c exceeds n_p (budget " + std::to_string(b) + ")");
    }
    if (!(cfg.eta > 0.0)) fail("eta must be positive");
    if (cfg.gamma < 1) fail("gamma must be >= 1");
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (cfg.zeta < 0.0 || cfg.zeta > 1.0) fail("zeta must be in [0,1]");
    if (!(cfg.eps > 0.0)) fail("eps must be positive");
    if (cfg.lambda < 0.0) fail("lambda must be nonnegative");
    if (!(cfg.phi_min < cfg.phi_max)) fail("phi_min must be < phi_max");
    if (!(cfg.pg_clip > 0.0)) fail("pg.clip must be positive");
    if (!(cfg.participation > 0.0) || cfg.participation > 1.0)
        fail("participation must be in (0,1]");
    if (!(cfg.dirichlet_alpha > 0.0)) fail("dirichlet_alpha must be positive");
    if (cfg.task.num_clusters < 1) fail("task.clusters must be >= 1");
    if (cfg.task.num_samples < cfg.clients) fail("task.samples must be >= clients");
    if (cfg.task.output_dim < 1) fail("task.output_dim must be >= 1");
    if (cfg.task.noise_sigma < 0.0) fail("task.noise_sigma must be nonnegative");
    if (!(cfg.task.cluster_spread >= 0.0)) fail("task.cluster_spread must be nonnegative");
    if (cfg.task.map_rank < 1) fail("task.map_rank must be >= 1");
    if (cfg.init.w0_scale < 0.0 || cfg.init.router_scale < 0.0)
        fail("init scales must be nonnegative");
}

RunConfig parse_config(const std::string& path_or_text) {
    std::string text;
    const auto first = path_or_text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && path_or_text[first] == '{') {
        text = path_or_text;
    } else {
        std::ifstream f(path_or_text);
        if (!f) throw ConfigError("config: cannot open file '" + path_or_text + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        text = ss.str();
    }

    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");

    reject_unknown_keys(j, {"seed", "rounds", "clients", "budgets", "k_max", "n_p", "dims",
                            "eta", "gamma", "batch_size", "zeta", "eps", "lambda", "phi_min",
                            "phi_max", "pg", "dmr", "participation", "dirichlet_alpha", "task",
                            "init", "output"},
                        "");

    RunConfig cfg;
    read_field(j, "seed", cfg.seed);
    read_field(j, "rounds", cfg.rounds);
    read_field(j, "clients", cfg.clients);
    read_field(j, "budgets", cfg.budgets);
    read_field(j, "k_max", cfg.k_max);
    read_field(j, "n_p", cfg.n_p);
    read_field(j, "eta", cfg.eta);
    read_field(j, "gamma", cfg.gamma);
    read_field(j, "batch_size", cfg.batch_size);
    read_field(j, "zeta", cfg.zeta);
    read_field(j, "eps", cfg.eps);
    read_field(j, "lambda", cfg.lambda);
    read_field(j, "phi_min", cfg.phi_min);
    read_field(j, "phi_max", cfg.phi_max);
    read_field(j, "participation", cfg.participation);
    read_field(j, "dirichlet_alpha", cfg.dirichlet_alpha);

    if (j.contains("dims")) {
        const json& d = j.at("dims");
        reject_unknown_keys(d, {"d", "l", "layers", "experts", "rank", "alpha"}, "dims.");
        read_field(d, "d", cfg.dims.d);
        read_field(d, "l", cfg.dims.l);
        read_field(d, "layers", cfg.dims.layers);
        read_field(d, "experts", cfg.dims.experts);
        read_field(d, "rank", cfg.dims.rank);
        read_field(d, "alpha", cfg.dims.alpha);
    }
    if (j.contains("pg")) {
        const json& p = j.at("pg");
        reject_unknown_keys(p, {"enabled", "clip"}, "pg.");
        read_field(p, "enabled", cfg.pg_enabled);
        read_field(p, "clip", cfg.pg_clip);
    }
    if (j.contains("dmr")) {
        const json& d = j.at("dmr");
        reject_unknown_keys(d, {"enabled", "phi_upload"}, "dmr.");
        read_field(d, "enabled", cfg.dmr_enabled);
        if (d.contains("phi_upload")) {
            std::string mode;
            read_field(d, "phi_upload", mode);
            cfg.phi_upload = parse_phi_upload(mode);
        }
    }
    if (j.contains("task")) {
        const json& t = j.at("task");
        reject_unknown_keys(t,
                            {"kind", "clusters", "samples", "output_dim", "noise_sigma",
                             "input_offset", "cluster_spread", "map_rank", "map_scale"},
                            "task.");
        if (t.contains("kind")) {
            std::string kind;
            read_field(t, "kind", kind);
            cfg.task.kind = parse_kind(kind);
        }
        read_field(t, "clusters", cfg.task.num_clusters);
        read_field(t, "samples", cfg.task.num_samples);
        read_field(t, "output_dim", cfg.task.output_dim);
        read_field(t, "noise_sigma", cfg.task.noise_sigma);
        read_field(t, "input_offset", cfg.task.input_offset);
        read_field(t, "cluster_spread", cfg.task.cluster_spread);
        read_field(t, "map_rank", cfg.task.map_rank);
        read_field(t, "map_scale", cfg.task.map_scale);
    }
    if (j.contains("init")) {
        const json& i = j.at("init");
        reject_unknown_keys(i, {"w0_scale", "router_scale"}, "init.");
        read_field(i, "w0_scale", cfg.init.w0_scale);
        read_field(i, "router_scale", cfg.init.router_scale);
    }
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown_keys(o, {"dir", "metrics", "summary", "checkpoint"}, "output.");
        read_field(o, "dir", cfg.output.dir);
        read_field(o, "metrics", cfg.output.metrics);
        read_field(o, "summary", cfg.output.summary);
        read_field(o, "checkpoint", cfg.output.checkpoint);
    }

    cfg.task.input_dim = cfg.dims.d;
    validate_config(cfg);
    return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["rounds"] = cfg.rounds;
    j["clients"] = cfg.clients;
    j["budgets"] = cfg.budgets;
    j["k_max"] = cfg.k_max;
    j["n_p"] = cfg.n_p;
    j["dims"] = {{"d", cfg.dims.d},
                 {"l", cfg.dims.l},
                 {"layers", cfg.dims.layers},
                 {"experts", cfg.dims.experts},
                 {"rank", cfg.dims.rank},
                 {"alpha", cfg.effective_alpha()}};
    j["eta"] = cfg.eta;
    j["gamma"] = cfg.gamma;
    j["batch_size"] = cfg.batch_size;
    j["zeta"] = cfg.zeta;
    j["eps"] = cfg.eps;
    j["lambda"] = cfg.lambda;
    j["phi_min"] = cfg.phi_min;
    j["phi_max"] = cfg.phi_max;
    j["pg"] = {{"enabled", cfg.pg_enabled}, {"clip", cfg.pg_clip}};
    j["dmr"] = {{"enabled", cfg.dmr_enabled},
                {"phi_upload", cfg.phi_upload == PhiUpload::Keep ? "keep" : "discard"}};
    j["participation"] = cfg.participation;
    j["dirichlet_alpha"] = cfg.dirichlet_alpha;
    j["task"] = {{"kind", kind_name(cfg.task.kind)},
                 {"clusters", cfg.task.num_clusters},
                 {"samples", cfg.task.num_samples},
                 {"output_dim", cfg.task.output_dim},
                 {"noise_sigma", cfg.task.noise_sigma},
                 {"input_offset", cfg.task.input_offset},
                 {"cluster_spread", cfg.task.cluster_spread},
                 {"map_rank", cfg.task.map_rank},
                 {"map_scale", cfg.task.map_scale}};
    j["init"] = {{"w0_scale", cfg.init.w0_scale}, {"router_scale", cfg.init.router_scale}};
    j["output"] = {{"dir", cfg.output.dir},
                   {"metrics", cfg.output.metrics},
                   {"summary", cfg.output.summary},
                   {"checkpoint", cfg.output.checkpoint}};
    return j.dump(2) + "\n";
}

}  // namespace ubsmoe
