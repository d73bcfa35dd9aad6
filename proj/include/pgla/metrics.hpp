#pragma once

#include "pgla/tensor.hpp"

namespace pgla {

enum class MetricKind { Cosine, PsnrDb, Mse, Lra };

struct MetricValue {
    MetricKind kind;
    double value;
};

inline constexpr double kPsnrCapDb = 100.0;

/// dot(a,b) / (|a||b|), accumulated in double. Zero-norm input is an error.
MetricValue cosine_similarity(const FlatTensor& a, const FlatTensor& b);

/// 10 log10(peak^2 / MSE) dB, capped at 100 (MSE == 0 returns the cap).
MetricValue psnr(const FlatTensor& reference, const FlatTensor& test, double peak);

MetricValue mse(const FlatTensor& reference, const FlatTensor& test);

/// Peak used for gradient-space PSNR: max(reference) - min(reference).
double gradient_peak(const FlatTensor& reference);

} // namespace pgla
