#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "aau/error.hpp"

namespace aau {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor of 64-bit floats. The single value carrier for all
// model math; rank-0 tensors (shape {}) hold scalars.
struct TensorF {
    Shape shape;
    std::vector<double> data;

    TensorF() = default;

    explicit TensorF(Shape s, double fill = 0.0) : shape(std::move(s)) {
        for (auto d : shape) require(d >= 0, "bad-shape", "negative dimension in " + shape_str(shape));
        data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    }

    static TensorF zeros(Shape s) { return TensorF(std::move(s), 0.0); }
    static TensorF full(Shape s, double v) { return TensorF(std::move(s), v); }
    static TensorF scalar(double v) { return TensorF(Shape{}, v); }

    static TensorF from(Shape s, std::vector<double> d) {
        TensorF t;
        t.shape = std::move(s);
        require(shape_numel(t.shape) == static_cast<std::int64_t>(d.size()), "shape-mismatch",
                "data length " + std::to_string(d.size()) + " does not match " + shape_str(t.shape));
        t.data = std::move(d);
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    std::int64_t dim(int i) const {
        if (i < 0) i += rank();
        return shape[static_cast<std::size_t>(i)];
    }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * dim(1) + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * dim(1) + j)]; }

    double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
    }

    double& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
        return data[static_cast<std::size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }
    double at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
        return data[static_cast<std::size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline double max_abs_diff(const TensorF& a, const TensorF& b) {
    require(same_shape(a.shape, b.shape), "shape-mismatch",
            "max_abs_diff " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bit_identical(const TensorF& a, const TensorF& b) {
    if (!same_shape(a.shape, b.shape)) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        // compare as bits so NaN payloads and signed zeros count
        std::uint64_t ua, ub;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        std::memcpy(&ua, &a.data[static_cast<std::size_t>(i)], 8);
        std::memcpy(&ub, &b.data[static_cast<std::size_t>(i)], 8);
        if (ua != ub) return false;
    }
    return true;
}

} // namespace aau
