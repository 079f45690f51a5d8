// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mcdm/errors.hpp"

namespace mcdm {

// Dense row-major tensor of doubles. Small and deliberately dumb: shape plus
// a flat buffer. All heavy math happens in the ops that consume it.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw PreconditionError("tensor data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t size(int i) const { return shape[static_cast<size_t>(i)]; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2D/3D/4D accessors for the common layouts.
    double& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double& at4(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    double at4(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int64_t> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    std::string shape_str() const {
        std::string out = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(shape[i]);
        }
        return out + "]";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw PreconditionError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace mcdm
