#include "ubsmoe/synthdata.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "ubsmoe/errors.hpp"

namespace ubsmoe {

SyntheticTask generate_task(const TaskSpec& spec, Rng rng) {
    if (spec.input_dim < 1 || spec.num_clusters < 1)
        throw ConfigError("generate_task: dims and clusters must be >= 1");
    if (spec.num_samples == 0) throw ConfigError("generate_task: zero samples");

    TaskSpec s = spec;
    if (s.kind == TaskKind::ClusterClassification) s.output_dim = s.num_clusters;
    if (s.output_dim < 1) throw ConfigError("generate_task: output_dim must be >= 1");

    SyntheticTask task;
    task.spec = s;

    Rng centers = rng.child(1);
    for (std::size_t k = 0; k < s.num_clusters; ++k) {
        std::vector<double> mu(s.input_dim);
        for (double& v : mu) v = s.input_offset + s.cluster_spread * centers.next_normal();
        task.cluster_means.push_back(std::move(mu));
    }

    if (s.kind == TaskKind::ClusterRegression) {
        // ground-truth maps are low-rank so a rank-limited adapter can reach them
        Rng maps = rng.child(2);
        const std::size_t mr = std::min<std::size_t>(std::max<std::size_t>(s.map_rank, 1),
                                                     std::min(s.output_dim, s.input_dim));
        for (std::size_t k = 0; k < s.num_clusters; ++k) {
            Matrix p(s.output_dim, mr), q(mr, s.input_dim);
            for (double& v : p.data) v = maps.next_normal() / std::sqrt(double(mr));
            for (double& v : q.data) v = maps.next_normal() / std::sqrt(double(s.input_dim));
            Matrix map = matmul(p, q);
            for (double& v : map.data) v *= s.map_scale;
            task.cluster_maps.push_back(std::move(map));
        }
    }

    Rng samples = rng.child(3);
    for (std::size_t i = 0; i < s.num_samples; ++i) {
        const std::size_t k = i % s.num_clusters;
        std::vector<double> xi(s.input_dim);
        for (std::size_t j = 0; j < s.input_dim; ++j)
            xi[j] = task.cluster_means[k][j] + samples.next_normal();
        std::vector<double> yi;
        if (s.kind == TaskKind::ClusterRegression) {
            yi = matvec(task.cluster_maps[k], xi);
            for (double& v : yi) v += s.noise_sigma * samples.next_normal();
        } else {
            yi.assign(s.num_clusters, 0.0);
            yi[k] = 1.0;
        }
        task.x.push_back(std::move(xi));
        task.y.push_back(std::move(yi));
        task.cluster.push_back(k);
    }
    return task;
}

Partition partition_dirichlet(const SyntheticTask& task, std::size_t num_clients, double alpha,
                              Rng rng) {
    if (num_clients < 1) throw ConfigError("partition_dirichlet: num_clients must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("partition_dirichlet: alpha must be positive");
    if (num_clients > task.size())
        throw ConfigError("partition_dirichlet: more clients than samples");

    const std::size_t n_clusters = task.spec.num_clusters;
    Partition part;
    part.dirichlet_alpha = alpha;
    part.mixtures.resize(num_clients);

    Rng mix_rng = rng.child(1);
    for (std::size_t c = 0; c < num_clients; ++c)
        part.mixtures[c] = mix_rng.next_dirichlet(alpha, n_clusters);

    Rng assign_rng = rng.child(2);
    constexpr int kMaxAttempts = 200;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        part.shards.assign(num_clients, {});
        Rng draw = assign_rng.child(attempt);
        for (std::size_t i = 0; i < task.size(); ++i) {
            const std::size_t k = task.cluster[i];
            double total = 0.0;
            for (std::size_t c = 0; c < num_clients; ++c) total += part.mixtures[c][k];
            double u = draw.next_double() * total;
            std::size_t chosen = num_clients - 1;
            for (std::size_t c = 0; c < num_clients; ++c) {
                u -= part.mixtures[c][k];
                if (u < 0.0) {
                    chosen = c;
                    break;
                }
            }
            part.shards[chosen].push_back(i);
        }
        bool ok = true;
        for (std::size_t c = 0; c < num_clients; ++c) {
            if (part.shards[c].empty()) {
                ok = false;
                part.mixtures[c] = mix_rng.next_dirichlet(alpha, n_clusters);
            }
        }
        if (ok) return part;
    }
    throw ConfigError("partition_dirichlet: could not produce non-empty shards");
}

void dump_task_csv(const SyntheticTask& task, std::ostream& os) {
    for (std::size_t j = 0; j < task.spec.input_dim; ++j) os << "x" << j << ",";
    for (std::size_t j = 0; j < task.y[0].size(); ++j) os << "y" << j << ",";
    os << "cluster\n";
    char buf[64];
    auto emit = [&](double v) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        (void)ec;
        os.write(buf, p - buf);
    };
    for (std::size_t i = 0; i < task.size(); ++i) {
        for (double v : task.x[i]) {
            emit(v);
            os << ",";
        }
        for (double v : task.y[i]) {
            emit(v);
            os << ",";
        }
        os << task.cluster[i] << "\n";
    }
}

SyntheticTask load_task_csv(std::istream& is, const TaskSpec& spec) {
    SyntheticTask task;
    task.spec = spec;
    if (spec.kind == TaskKind::ClusterClassification)
        task.spec.output_dim = spec.num_clusters;
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("load_task_csv: empty file");
    const std::size_t out_dim = task.spec.output_dim;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != spec.input_dim + out_dim + 1)
            throw ConfigError("load_task_csv: column count mismatch");
        task.x.emplace_back(vals.begin(), vals.begin() + spec.input_dim);
        task.y.emplace_back(vals.begin() + spec.input_dim,
                            vals.begin() + spec.input_dim + out_dim);
        task.cluster.push_back(static_cast<std::size_t>(vals.back()));
    }
    if (task.x.empty()) throw ConfigError("load_task_csv: no samples");
    return task;
}

}  // namespace ubsmoe
