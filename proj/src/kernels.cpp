#include "ubsmoe/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "ubsmoe/errors.hpp"

namespace ubsmoe::kern {

namespace detail {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double* y, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_scalar(double* x, double alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double nrm2sq_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

}  // namespace detail

namespace {

struct Ops {
    Backend backend;
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double*, double, const double*, std::size_t);
    void (*scal)(double*, double, std::size_t);
    double (*nrm2sq)(const double*, std::size_t);
};

constexpr Ops kScalarOps{Backend::Scalar, detail::dot_scalar, detail::axpy_scalar,
                         detail::scal_scalar, detail::nrm2sq_scalar};

#ifdef UBSMOE_HAVE_AVX2_TU
constexpr Ops kAvx2Ops{Backend::Avx2, detail::dot_avx2, detail::axpy_avx2,
                       detail::scal_avx2, detail::nrm2sq_avx2};
#endif
#ifdef UBSMOE_HAVE_NEON_TU
constexpr Ops kNeonOps{Backend::Neon, detail::dot_neon, detail::axpy_neon,
                       detail::scal_neon, detail::nrm2sq_neon};
#endif

bool backend_available(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return true;
        case Backend::Avx2:
#ifdef UBSMOE_HAVE_AVX2_TU
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Backend::Neon:
#ifdef UBSMOE_HAVE_NEON_TU
            return true;  // NEON is mandatory on aarch64
#else
            return false;
#endif
    }
    return false;
}

const Ops* ops_for(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return &kScalarOps;
#ifdef UBSMOE_HAVE_AVX2_TU
        case Backend::Avx2:
            return &kAvx2Ops;
#endif
#ifdef UBSMOE_HAVE_NEON_TU
        case Backend::Neon:
            return &kNeonOps;
#endif
        default:
            return &kScalarOps;
    }
}

Backend detect_backend() {
    if (const char* env = std::getenv("UBSMOE_KERNEL")) {
        std::string v(env);
        if (v == "scalar") return Backend::Scalar;
        if (v == "avx2" && backend_available(Backend::Avx2)) return Backend::Avx2;
        if (v == "neon" && backend_available(Backend::Neon)) return Backend::Neon;
        // unknown value or unavailable backend: fall through to detection
    }
    if (backend_available(Backend::Avx2)) return Backend::Avx2;
    if (backend_available(Backend::Neon)) return Backend::Neon;
    return Backend::Scalar;
}

std::atomic<const Ops*> g_ops{nullptr};

const Ops& ops() {
    const Ops* p = g_ops.load(std::memory_order_acquire);
    if (!p) {
        p = ops_for(detect_backend());
        g_ops.store(p, std::memory_order_release);
    }
    return *p;
}

}  // namespace

Backend active_backend() { return ops().backend; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
    }
    return "unknown";
}

void force_backend(Backend b) {
    if (!backend_available(b))
        throw ConfigError(std::string("kernel backend not available: ") + backend_name(b));
    g_ops.store(ops_for(b), std::memory_order_release);
}

double dot(const double* a, const double* b, std::size_t n) { return ops().dot(a, b, n); }
void axpy(double* y, double alpha, const double* x, std::size_t n) { ops().axpy(y, alpha, x, n); }
void scal(double* x, double alpha, std::size_t n) { ops().scal(x, alpha, n); }
double nrm2sq(const double* x, std::size_t n) { return ops().nrm2sq(x, n); }

}  // namespace ubsmoe::kern
