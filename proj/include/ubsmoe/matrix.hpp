#pragma once

// Minimal dense linear algebra: row-major matrices of 64-bit floats plus the
// handful of routines the rest of the simulator is built on.

#include <cstddef>
#include <span>
#include <vector>

namespace ubsmoe {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, data.size() == rows * cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double v) { data.assign(data.size(), v); }

    static Matrix identity(std::size_t n);
};

// Standard matrix product; throws ConfigError on inner-dimension mismatch
// and NumericError if the result contains a non-finite entry.
Matrix matmul(const Matrix& a, const Matrix& b);

// w * x for w (m x n), x length n -> length m.
std::vector<double> matvec(const Matrix& w, std::span<const double> x);

// y += s * (w^T x) for w (m x n), x length m, y length n.
void add_transposed_matvec(const Matrix& w, std::span<const double> x, double s,
                           std::span<double> y);

// m += s * u v^T for u length m.rows, v length m.cols.
void add_outer(Matrix& m, double s, std::span<const double> u, std::span<const double> v);

// Numerically stable softmax (max-subtraction); output sums to 1.
std::vector<double> softmax(std::span<const double> v);

// Softmax over the entries of v named by idx; all other outputs are exactly 0.
// The returned vector has v.size() entries.
std::vector<double> restricted_softmax(std::span<const double> v,
                                       std::span<const std::size_t> idx);

// Indices of the k largest values, in decreasing-value order, ties broken by
// lowest index. 1 <= k <= v.size().
std::vector<std::size_t> topk_indices(std::span<const double> v, std::size_t k);

}  // namespace ubsmoe
