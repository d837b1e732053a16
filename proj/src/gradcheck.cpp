#include <algorithm>
#include <cmath>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/kernels.hpp"
#include "ubsmoe/run.hpp"

namespace ubsmoe {

namespace {

constexpr double kStep = 1e-6;

// loss = <upstream, y> with the routing sets frozen
double frozen_loss(const SmoeLayerParams& p, std::span<const double> x,
                   const RoutingDecision& sets, std::span<const double> upstream) {
    std::vector<double> y = smoe_forward_frozen_sets(p, x, sets);
    return kern::dot(upstream.data(), y.data(), y.size());
}

// norm-relative error between an analytic gradient tensor and its central
// finite-difference counterpart
double group_rel_err(std::span<const double> analytic, std::span<const double> fd) {
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - fd[i];
        diff += d * d;
        na += analytic[i] * analytic[i];
        nf += fd[i] * fd[i];
    }
    const double scale = std::sqrt(std::max(na, nf));
    if (scale < 1e-12) return 0.0;
    return std::sqrt(diff) / scale;
}

std::vector<double> fd_tensor(SmoeLayerParams& p, std::vector<double>& storage,
                              std::span<const double> x, const RoutingDecision& sets,
                              std::span<const double> upstream) {
    std::vector<double> fd(storage.size());
    for (std::size_t i = 0; i < storage.size(); ++i) {
        const double orig = storage[i];
        storage[i] = orig + kStep;
        const double up = frozen_loss(p, x, sets, upstream);
        storage[i] = orig - kStep;
        const double dn = frozen_loss(p, x, sets, upstream);
        storage[i] = orig;
        fd[i] = (up - dn) / (2.0 * kStep);
    }
    return fd;
}

}  // namespace

double GradCheckReport::worst() const {
    return std::max({max_rel_err_adapter_b, max_rel_err_adapter_a, max_rel_err_router,
                     max_rel_err_phi});
}

GradCheckReport gradcheck(std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
    Rng rng(seed);
    GradCheckReport rep;

    for (std::size_t trial = 0; trial < trials; ++trial) {
        Rng tr = rng.child(trial);
        const std::size_t d = 2 + tr.next_below(7);  // 2..8
        const std::size_t l = 2 + tr.next_below(7);
        const std::size_t m = 2 + tr.next_below(5);  // 2..6
        const std::size_t r = 1 + tr.next_below(std::min<std::size_t>({3, d, l}));
        const std::size_t k_c = 1 + tr.next_below(m);
        const std::size_t n_p = k_c + tr.next_below(m - k_c + 1);

        SmoeLayerParams p;
        p.router_w = Matrix(m, d);
        for (double& v : p.router_w.data) v = tr.next_normal();
        p.phi.resize(m);
        for (double& v : p.phi) v = tr.next_uniform(-1.0, 1.0);
        for (std::size_t e = 0; e < m; ++e) {
            Expert ex;
            ex.w0 = Matrix(d, l);
            for (double& v : ex.w0.data) v = tr.next_normal();
            ex.adapter.rank = r;
            ex.adapter.alpha = double(r) * tr.next_uniform(0.5, 2.0);
            ex.adapter.b = Matrix(d, r);
            // half the trials start from the zero-init adapter state
            if (trial % 2 == 1)
                for (double& v : ex.adapter.b.data) v = tr.next_normal();
            ex.adapter.a = Matrix(r, l);
            for (double& v : ex.adapter.a.data) v = tr.next_normal();
            p.experts.push_back(std::move(ex));
        }

        std::vector<double> x(d), upstream(l);
        for (double& v : x) v = tr.next_normal();
        for (double& v : upstream) v = tr.next_normal();

        const RoutingDecision sets = route_dmr(p, x, k_c, n_p);
        const LayerGradients analytic = smoe_backward(p, x, sets, upstream);

        for (std::size_t e = 0; e < m; ++e) {
            auto fd_b = fd_tensor(p, p.experts[e].adapter.b.data, x, sets, upstream);
            rep.max_rel_err_adapter_b = std::max(
                rep.max_rel_err_adapter_b, group_rel_err(analytic.experts[e].db.data, fd_b));
            auto fd_a = fd_tensor(p, p.experts[e].adapter.a.data, x, sets, upstream);
            rep.max_rel_err_adapter_a = std::max(
                rep.max_rel_err_adapter_a, group_rel_err(analytic.experts[e].da.data, fd_a));
        }
        auto fd_router = fd_tensor(p, p.router_w.data, x, sets, upstream);
        rep.max_rel_err_router =
            std::max(rep.max_rel_err_router, group_rel_err(analytic.router.data, fd_router));
        auto fd_phi = fd_tensor(p, p.phi, x, sets, upstream);
        rep.max_rel_err_phi = std::max(rep.max_rel_err_phi, group_rel_err(analytic.phi, fd_phi));
    }
    return rep;
}

}  // namespace ubsmoe
