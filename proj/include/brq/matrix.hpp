#pragma once

#include <cstddef>
#include <vector>

namespace brq {

// Dense row-major matrix of doubles. Storage plus element access only; the
// heavier numeric loops live next to the code that owns them.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

} // namespace brq
