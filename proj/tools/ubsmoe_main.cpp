// Command-line entry point: run, gradcheck, cost, bias-lab.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ubsmoe/biaslab.hpp"
#include "ubsmoe/costmodel.hpp"
#include "ubsmoe/errors.hpp"
#include "ubsmoe/run.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckFailed = 4;

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::filesystem::path resolve_out_dir(const std::string& cfg_dir, const std::string& flag_dir) {
    if (!flag_dir.empty()) return flag_dir;
    if (!cfg_dir.empty()) return cfg_dir;
    if (const char* env = std::getenv("UBSMOE_OUT_DIR")) return env;
    return ".";
}

int cmd_run(const std::string& config_arg, const std::string& out_dir_flag,
            bool has_seed, std::uint64_t seed, bool has_rounds, std::size_t rounds,
            const std::string& phi_upload) {
    ubsmoe::RunConfig cfg =
        config_arg.empty() ? ubsmoe::parse_config("{}") : ubsmoe::parse_config(config_arg);
    if (has_seed) cfg.seed = seed;
    if (has_rounds) cfg.rounds = rounds;
    if (!phi_upload.empty()) {
        if (phi_upload == "keep")
            cfg.phi_upload = ubsmoe::PhiUpload::Keep;
        else if (phi_upload == "discard")
            cfg.phi_upload = ubsmoe::PhiUpload::Discard;
        else
            throw ubsmoe::ConfigError("--phi-upload must be keep or discard");
    }
    ubsmoe::validate_config(cfg);

    ubsmoe::RunResult result = ubsmoe::run_federated(cfg);

    const std::filesystem::path dir = resolve_out_dir(cfg.output.dir, out_dir_flag);
    std::filesystem::create_directories(dir);

    {
        std::ofstream os(dir / cfg.output.metrics, std::ios::binary);
        if (!os) throw ubsmoe::ConfigError("cannot write metrics file");
        ubsmoe::write_metrics_csv(result, os);
    }
    {
        std::ofstream os(dir / cfg.output.summary, std::ios::binary);
        if (!os) throw ubsmoe::ConfigError("cannot write summary file");
        ubsmoe::write_summary_json(cfg, result, os);
    }
    if (!cfg.output.checkpoint.empty()) {
        std::ofstream os(dir / cfg.output.checkpoint, std::ios::binary);
        if (!os) throw ubsmoe::ConfigError("cannot write checkpoint file");
        ubsmoe::save_checkpoint(result.state, os);
    }

    std::cout << "run: " << result.rounds.size() << " rounds, metrics -> "
              << (dir / cfg.output.metrics).string() << "\n";
    if (!result.rounds.empty()) {
        const auto& last = result.rounds.back();
        std::cout << "final loss " << fmt(last.loss_weighted_mean) << ", entropy "
                  << fmt(last.entropy_mean) << ", gini " << fmt(last.gini_mean) << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed) {
    const ubsmoe::GradCheckReport rep = ubsmoe::gradcheck(trials, seed);
    std::cout << "adapter_b max rel err: " << fmt(rep.max_rel_err_adapter_b) << "\n"
              << "adapter_a max rel err: " << fmt(rep.max_rel_err_adapter_a) << "\n"
              << "router    max rel err: " << fmt(rep.max_rel_err_router) << "\n"
              << "phi       max rel err: " << fmt(rep.max_rel_err_phi) << "\n";
    if (rep.worst() > 1e-5) {
        std::cout << "FAIL: worst " << fmt(rep.worst()) << " exceeds 1e-5\n";
        return kExitCheckFailed;
    }
    std::cout << "OK: all gradient groups within 1e-5\n";
    return kExitOk;
}

int cmd_cost(const ubsmoe::cost::ModelDims& dims, const std::vector<std::size_t>& kc_list,
             const std::vector<std::size_t>& rc_list) {
    using namespace ubsmoe::cost;
    std::cout << "method,budget,k_c,r_c,client_flops,client_flops_end_to_end,server_flops,"
                 "upload_params,download_params\n";
    for (const CostRow& row : build_cost_report(dims, kc_list, rc_list)) {
        const bool sparsity = row.method == Method::UbSmoe || row.method == Method::A3Smoe;
        std::cout << method_name(row.method) << ",b" << (row.budget_index + 1) << ",";
        if (sparsity) std::cout << row.k_c;
        std::cout << "," << row.r_c << "," << fmt(row.client_flops) << ",";
        if (sparsity) std::cout << fmt(row.client_flops_end_to_end);
        std::cout << "," << fmt(row.server_flops) << "," << fmt(row.upload_params) << ","
                  << fmt(row.download_params) << "\n";
    }
    return kExitOk;
}

int cmd_bias_lab(std::size_t experts, std::size_t block_dim, std::size_t clients,
                 const std::vector<std::size_t>& k_list, std::size_t steps,
                 std::size_t instances, std::uint64_t seed) {
    using namespace ubsmoe::bias;
    std::cout << "k,p_config,lower_bound,exact_bias,upper_bound,plateau_gap\n";
    for (std::size_t inst = 0; inst < instances; ++inst) {
        ubsmoe::Rng rng(seed + inst);
        // one target set per instance so plateau gaps are comparable across K
        QuadraticMoeObjective base = make_balanced_objective(
            clients, experts, block_dim, std::min<std::size_t>(1, experts), 1.0, rng.child(1));
        const auto floors = run_floor_experiment(base, k_list, steps, rng.child(777));

        for (std::size_t qi = 0; qi < k_list.size(); ++qi) {
            const std::size_t k = k_list[qi];
            QuadraticMoeObjective obj = base;
            for (std::size_t c = 0; c < obj.num_clients(); ++c) {
                obj.probs[c].assign(experts, double(k) / double(experts));
                obj.k_c[c] = k;
            }
            // bias measured at the origin against client 0
            std::vector<std::vector<double>> theta(experts,
                                                   std::vector<double>(block_dim, 0.0));
            const auto bias = exact_bias(obj, theta, 0);
            double g2_min = 0.0, g2_max = 0.0;
            for (std::size_t i = 0; i < experts; ++i) {
                double g2 = 0.0;
                for (double v : obj.block_grad(theta, 0, i)) g2 += v * v;
                if (i == 0) g2_min = g2_max = g2;
                g2_min = std::min(g2_min, g2);
                g2_max = std::max(g2_max, g2);
            }

            // config hash: FNV-1a over the probability matrix text
            std::uint64_t h = 1469598103934665603ull;
            for (const auto& row : obj.probs)
                for (double p : row) {
                    const std::string s = fmt(p);
                    for (char ch : s) h = (h ^ std::uint8_t(ch)) * 1099511628211ull;
                }
            std::ostringstream hash;
            hash << std::hex << h;

            std::cout << k << "," << hash.str() << ","
                      << fmt(bias_lower_bound(g2_min, experts, k)) << ","
                      << fmt(bias_norm_sq(bias)) << ","
                      << fmt(bias_upper_bound(g2_max, experts, k)) << ","
                      << fmt(floors[qi].plateau_gap) << "\n";
        }
    }
    return kExitOk;
}

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stoull(cell));
    if (out.empty()) throw ubsmoe::ConfigError("empty list option");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous federated SMoE fine-tuning simulator"};
    app.require_subcommand(1);

    std::string config_arg, out_dir_flag, phi_upload;
    std::uint64_t seed = 42;
    std::size_t rounds = 0;
    auto* run = app.add_subcommand("run", "run a federated simulation");
    run->add_option("--config", config_arg, "config file path or inline JSON");
    run->add_option("--out", out_dir_flag, "output directory (overrides config and env)");
    auto* seed_opt = run->add_option("--seed", seed, "override config seed");
    auto* rounds_opt = run->add_option("--rounds", rounds, "override config rounds");
    run->add_option("--phi-upload", phi_upload, "keep or discard client phi at aggregation");

    std::size_t gc_trials = 25;
    std::uint64_t gc_seed = 42;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc->add_option("--trials", gc_trials, "number of random layers");
    gc->add_option("--seed", gc_seed, "rng seed");

    ubsmoe::cost::ModelDims dims;
    std::string kc_list_text = "1,2,4,8", rc_list_text = "6,8,12,20";
    auto* cost = app.add_subcommand("cost", "analytic cost tables (CSV on stdout)");
    cost->add_option("--d", dims.d, "hidden dim");
    cost->add_option("--l", dims.l, "FFN intermediate dim");
    cost->add_option("--layers", dims.layers, "SMoE layer count");
    cost->add_option("--experts", dims.experts, "experts per layer");
    cost->add_option("--rank", dims.rank, "adapter rank for sparsity methods");
    cost->add_option("--gamma", dims.gamma, "local iterations");
    cost->add_option("--batch", dims.batch, "sequences per iteration");
    cost->add_option("--seq", dims.seq, "tokens per sequence");
    cost->add_option("--clients", dims.clients, "client count");
    cost->add_option("--vocab", dims.vocab, "output head width");
    cost->add_option("--kc-list", kc_list_text, "sparsity budgets");
    cost->add_option("--rc-list", rc_list_text, "LoRA-rank budgets");

    std::size_t bl_experts = 4, bl_dim = 2, bl_clients = 2, bl_steps = 4000, bl_instances = 1;
    std::string bl_k_list = "1,2,4";
    std::uint64_t bl_seed = 42;
    auto* bl = app.add_subcommand("bias-lab", "sparse-gradient bias experiments (CSV)");
    bl->add_option("--experts", bl_experts, "expert blocks");
    bl->add_option("--block-dim", bl_dim, "block dimension");
    bl->add_option("--clients", bl_clients, "clients");
    bl->add_option("--k-list", bl_k_list, "sparsity values");
    bl->add_option("--steps", bl_steps, "SGD steps");
    bl->add_option("--instances", bl_instances, "random instances");
    bl->add_option("--seed", bl_seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config_arg, out_dir_flag, seed_opt->count() > 0, seed,
                           rounds_opt->count() > 0, rounds, phi_upload);
        if (gc->parsed()) return cmd_gradcheck(gc_trials, gc_seed);
        if (cost->parsed()) return cmd_cost(dims, parse_list(kc_list_text),
                                            parse_list(rc_list_text));
        if (bl->parsed())
            return cmd_bias_lab(bl_experts, bl_dim, bl_clients, parse_list(bl_k_list),
                                bl_steps, bl_instances, bl_seed);
    } catch (const ubsmoe::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ubsmoe::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
