#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace saze {

// Row-major dense matrix of doubles. Just enough structure for batches of
// images, features and probability rows; not a linear algebra library.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace saze
