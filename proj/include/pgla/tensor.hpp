#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pgla/error.hpp"

namespace pgla {

/// Flat row-major float32 tensor. The only data carrier that crosses module
/// boundaries; heavier math runs on double internally and converts at the edge.
struct FlatTensor {
    std::vector<uint32_t> shape;
    std::vector<float> data;

    FlatTensor() = default;
    FlatTensor(std::vector<uint32_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel() != data.size())
            throw Error(ErrorKind::Shape, "tensor data length does not match shape product");
    }

    static FlatTensor zeros(std::vector<uint32_t> s) {
        size_t n = 1;
        for (auto d : s) n *= d;
        return FlatTensor(std::move(s), std::vector<float>(n, 0.0f));
    }
    static FlatTensor vector_of(std::vector<float> d) {
        std::vector<uint32_t> s{static_cast<uint32_t>(d.size())};
        return FlatTensor(std::move(s), std::move(d));
    }

    size_t numel() const {
        size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
    size_t size() const { return data.size(); }
    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
    void require_finite(const char* what) const {
        if (!all_finite()) throw Error(ErrorKind::Parameter, std::string(what) + ": non-finite entries");
    }
};

inline void require_same_length(const FlatTensor& a, const FlatTensor& b, const char* what) {
    if (a.size() != b.size())
        throw Error(ErrorKind::Shape, std::string(what) + ": length mismatch");
}

inline double mean_of(const FlatTensor& t) {
    if (t.size() == 0) throw Error(ErrorKind::Input, "mean of empty tensor");
    double s = 0.0;
    for (float v : t.data) s += v;
    return s / static_cast<double>(t.size());
}

/// Population standard deviation, accumulated in double.
inline double stddev_of(const FlatTensor& t) {
    double mu = mean_of(t);
    double s = 0.0;
    for (float v : t.data) {
        double d = v - mu;
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(t.size()));
}

inline double l2_norm(const FlatTensor& t) {
    double s = 0.0;
    for (float v : t.data) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

} // namespace pgla
