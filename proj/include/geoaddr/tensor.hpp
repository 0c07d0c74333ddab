#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace geoaddr {

// Dense row-major float64 array.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}

    static std::size_t numel(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    // Product of all trailing dimensions.
    std::size_t cols() const { return shape.empty() ? 1 : data.size() / std::max<std::size_t>(shape[0], 1); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double* row(std::size_t r) { return data.data() + r * cols(); }
    const double* row(std::size_t r) const { return data.data() + r * cols(); }

    bool all_finite() const;
    std::string shape_string() const;

    bool operator==(const Tensor&) const = default;
};

}  // namespace geoaddr
