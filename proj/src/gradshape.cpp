#include "pgla/gradshape.hpp"

#include <cmath>

namespace pgla {

namespace {
constexpr double kScaleFloor = 1e-8;
}

uint32_t grid_side(uint64_t length, bool strict) {
    if (length < 1) throw Error(ErrorKind::Input, "grid_side: empty gradient");
    auto g = static_cast<uint64_t>(std::llround(std::sqrt(static_cast<double>(length))));
    // settle floating sqrt to the exact ceil by comparison
    while (g > 0 && (g - 1) * (g - 1) >= length) --g;
    while (g * g < length) ++g;
    if (strict && g * g == length) ++g;
    return static_cast<uint32_t>(g);
}

double quantize_scale_pow2(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) s = kScaleFloor;
    s = std::max(s, kScaleFloor);
    return std::ldexp(1.0, static_cast<int>(std::lround(std::log2(s))));
}

AdjustedGrid adjust(const GradientVector& g, std::optional<double> scale_override, bool strict_side) {
    g.layout.validate();
    if (g.values.size() != g.layout.total()) throw Error(ErrorKind::Layout, "adjust: layout/value mismatch");
    const uint64_t L = g.values.size();
    const uint32_t side = grid_side(L, strict_side);
    const uint64_t area = static_cast<uint64_t>(side) * side;

    // the default scale is quantized to a power of two so restore() is exact;
    // callers overriding the scale trade that for an unbiased normalization
    double s = scale_override.value_or(quantize_scale_pow2(stddev_of(g.values)));
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::Parameter, "adjust: scale must be positive");
    float inv = static_cast<float>(1.0 / s);

    std::vector<float> grid(area, 0.0f);
    for (uint64_t i = 0; i < L; ++i) grid[i] = g.values[i] * inv;

    AdjustedGrid out;
    out.grid = FlatTensor({1u, side, side}, std::move(grid));
    out.original_length = L;
    out.padding = area - L;
    out.scale = s;
    out.offset = 0.0;
    return out;
}

GradientVector restore(const AdjustedGrid& grid, const LayerLayout& layout, GradientRole role) {
    layout.validate();
    if (layout.total() != grid.original_length)
        throw Error(ErrorKind::Layout, "restore: layout length does not match grid");
    if (grid.grid.size() < grid.original_length)
        throw Error(ErrorKind::Shape, "restore: grid smaller than recorded length");
    const float s = static_cast<float>(grid.scale);
    const float off = static_cast<float>(grid.offset);
    std::vector<float> values(grid.original_length);
    for (uint64_t i = 0; i < grid.original_length; ++i) values[i] = grid.grid[i] * s + off;
    return GradientVector(FlatTensor::vector_of(std::move(values)), layout, role);
}

Normalized normalize(const FlatTensor& v) {
    if (v.size() == 0) throw Error(ErrorKind::Input, "normalize: empty tensor");
    double mu = mean_of(v);
    double s = std::max(stddev_of(v), kScaleFloor);
    std::vector<float> scaled(v.size());
    for (size_t i = 0; i < v.size(); ++i)
        scaled[i] = static_cast<float>((static_cast<double>(v[i]) - mu) / s);
    Normalized out;
    out.scaled = FlatTensor(v.shape, std::move(scaled));
    out.scale = s;
    out.offset = mu;
    return out;
}

FlatTensor denormalize(const Normalized& n) {
    std::vector<float> values(n.scaled.size());
    for (size_t i = 0; i < n.scaled.size(); ++i)
        values[i] = static_cast<float>(static_cast<double>(n.scaled[i]) * n.scale + n.offset);
    return FlatTensor(n.scaled.shape, std::move(values));
}

} // namespace pgla
