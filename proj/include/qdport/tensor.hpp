#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace qdport {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major array of doubles. Rank 0 (scalar), 1 and 2 are used by the pipeline;
/// higher ranks only appear as storage shapes (conv kernels).
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_size(shape) != data.size())
            throw DataError("tensor: shape " + shape_str(shape) + " does not match " +
                            std::to_string(data.size()) + " elements");
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor(Shape{rows, cols}, fill);
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    /// Leading dimension of a matrix; 1 for vectors and scalars.
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    /// Trailing dimension; for a vector its length.
    std::size_t cols() const { return rank() == 0 ? 1 : shape.back(); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

} // namespace qdport
