#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "prunekit/errors.hpp"

namespace prunekit {

// Dense row-major f64 tensor. Shape is explicit; product(shape) == data.size().
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s)
        : shape(std::move(s)), data(count(shape), 0.0) {}
    Tensor(std::vector<size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size())
            throw ShapeError("tensor: shape does not match payload length");
    }

    static size_t count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    size_t dim(size_t i) const { return shape[i]; }
    size_t rank() const { return shape.size(); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // rank-4 accessors (N, C, H, W)
    double& at(size_t n, size_t c, size_t h, size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at(size_t n, size_t c, size_t h, size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    // rank-2 accessors (rows, cols)
    double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    Tensor reshaped(std::vector<size_t> s) const {
        if (count(s) != data.size())
            throw ShapeError("tensor: reshape changes element count");
        Tensor t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }
};

// Trainable tensor plus its gradient and SGD momentum buffer.
struct Parameter {
    Tensor value;
    Tensor grad;
    Tensor momentum;

    Parameter() = default;
    explicit Parameter(Tensor v)
        : value(std::move(v)), grad(Tensor(value.shape)), momentum(Tensor(value.shape)) {}

    bool empty() const { return value.empty(); }
    void zero_grad() { grad.fill(0.0); }
};

} // namespace prunekit
