#include "ubsmoe/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ubsmoe/errors.hpp"
#include "ubsmoe/kernels.hpp"

namespace ubsmoe {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ConfigError("matmul: dimension mismatch (" + std::to_string(a.rows) + "x" +
                          std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                          std::to_string(b.cols) + ")");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k)
            kern::axpy(ci, ai[k], b.row(k), b.cols);
    }
    for (double v : c.data)
        if (!std::isfinite(v)) throw NumericError("matmul: non-finite entry in result");
    return c;
}

std::vector<double> matvec(const Matrix& w, std::span<const double> x) {
    if (w.cols != x.size()) throw ConfigError("matvec: dimension mismatch");
    std::vector<double> y(w.rows);
    for (std::size_t i = 0; i < w.rows; ++i) y[i] = kern::dot(w.row(i), x.data(), w.cols);
    return y;
}

void add_transposed_matvec(const Matrix& w, std::span<const double> x, double s,
                           std::span<double> y) {
    if (w.rows != x.size() || w.cols != y.size())
        throw ConfigError("add_transposed_matvec: dimension mismatch");
    for (std::size_t i = 0; i < w.rows; ++i)
        if (x[i] != 0.0) kern::axpy(y.data(), s * x[i], w.row(i), w.cols);
}

void add_outer(Matrix& m, double s, std::span<const double> u, std::span<const double> v) {
    if (m.rows != u.size() || m.cols != v.size())
        throw ConfigError("add_outer: dimension mismatch");
    for (std::size_t i = 0; i < m.rows; ++i)
        if (u[i] != 0.0) kern::axpy(m.row(i), s * u[i], v.data(), m.cols);
}

std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) throw ConfigError("softmax: empty input");
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError("softmax: non-finite input");
    const double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

std::vector<double> restricted_softmax(std::span<const double> v,
                                       std::span<const std::size_t> idx) {
    if (idx.empty()) throw ConfigError("restricted_softmax: empty index set");
    double m = v[idx[0]];
    for (std::size_t j : idx) {
        if (j >= v.size()) throw ConfigError("restricted_softmax: index out of range");
        m = std::max(m, v[j]);
    }
    std::vector<double> out(v.size(), 0.0);
    double sum = 0.0;
    for (std::size_t j : idx) {
        out[j] = std::exp(v[j] - m);
        sum += out[j];
    }
    for (std::size_t j : idx) out[j] /= sum;
    return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> v, std::size_t k) {
    if (k < 1 || k > v.size()) throw ConfigError("topk_indices: k out of range");
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;  // tie -> lowest index
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      better);
    idx.resize(k);
    return idx;
}

}  // namespace ubsmoe
