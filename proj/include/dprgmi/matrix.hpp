#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dprgmi/errors.hpp"

namespace dprgmi {

// Dense row-major matrix of doubles. Small enough here that no BLAS backing
// is warranted; every consumer iterates rows in index order.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

bool all_finite(const Matrix& m);

// Throws ConfigError unless every entry is 0 or 1.
void require_binary(const Matrix& labels, const char* what);

}  // namespace dprgmi
