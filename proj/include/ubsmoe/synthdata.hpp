#pragma once

// Synthetic cluster-structured supervised tasks and non-IID Dirichlet
// partitioning, so federated runs are self-contained and reproducible.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "ubsmoe/matrix.hpp"
#include "ubsmoe/model.hpp"
#include "ubsmoe/rng.hpp"

namespace ubsmoe {

struct TaskSpec {
    TaskKind kind = TaskKind::ClusterRegression;
    std::size_t input_dim = 8;
    std::size_t output_dim = 4;   // for classification this is forced to num_clusters
    std::size_t num_clusters = 4;
    std::size_t num_samples = 512;
    double noise_sigma = 0.01;    // label noise (regression only)
    double input_offset = 0.0;    // common mean shift of every cluster center
    double cluster_spread = 1.0;  // scale of cluster center placement
    std::size_t map_rank = 2;     // rank of the per-cluster ground-truth map
    double map_scale = 1.0;
};

struct SyntheticTask {
    TaskSpec spec;
    std::vector<std::vector<double>> x;
    std::vector<std::vector<double>> y;
    std::vector<std::size_t> cluster;
    std::vector<std::vector<double>> cluster_means;  // num_clusters x input_dim
    std::vector<Matrix> cluster_maps;                // output_dim x input_dim (regression)
    std::uint64_t seed = 0;

    std::size_t size() const { return x.size(); }
};

struct Partition {
    std::vector<std::vector<std::size_t>> shards;  // per-client sample indices
    double dirichlet_alpha = 0.0;
    // the drawn per-client cluster mixtures, kept for diagnostics
    std::vector<std::vector<double>> mixtures;
};

// Reproducible dataset under the given stream. Cluster assignment is
// round-robin so every cluster is populated.
SyntheticTask generate_task(const TaskSpec& spec, Rng rng);

// Per-client cluster mixtures drawn from Dirichlet(alpha); each sample is
// assigned to a client proportionally to the clients' weight on its cluster.
// Any client left empty gets its mixture resampled and assignment rerun.
Partition partition_dirichlet(const SyntheticTask& task, std::size_t num_clients, double alpha,
                              Rng rng);

// CSV dump/load: x columns, y columns, cluster id.
void dump_task_csv(const SyntheticTask& task, std::ostream& os);
SyntheticTask load_task_csv(std::istream& is, const TaskSpec& spec);

}  // namespace ubsmoe
