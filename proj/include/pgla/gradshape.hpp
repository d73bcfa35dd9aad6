#pragma once

#include <optional>

#include "pgla/layout.hpp"

namespace pgla {

/// A gradient flattened and zero-padded into a square 1 x g x g grid, plus the
/// bookkeeping needed to undo the mapping exactly.
///
/// The grid values are values / scale. The scale is quantized to a power of
/// two so that the division is exact in float arithmetic and restore() is
/// bit-identical to the original vector; the offset is kept at zero for the
/// same reason (see normalize() for the unconstrained variant).
struct AdjustedGrid {
    FlatTensor grid;            // shape {1, g, g}
    uint64_t original_length = 0;
    uint64_t padding = 0;       // g^2 - original_length
    double scale = 1.0;
    double offset = 0.0;

    uint32_t side() const { return grid.shape.size() == 3 ? grid.shape[1] : 0; }
};

/// Minimum g with g^2 > L (strict by default, so perfect squares still pad);
/// with strict=false the rule relaxes to g^2 >= L.
uint32_t grid_side(uint64_t length, bool strict = true);

/// Nearest power of two to s (in log space), floored away from zero.
double quantize_scale_pow2(double s);

/// Flatten in layout order, scale-normalize, zero-pad the tail to g^2.
/// scale_override, when given, replaces the per-gradient std estimate (it is
/// still quantized); the caller uses this to normalize a noisy gradient by an
/// estimate of the clean scale.
AdjustedGrid adjust(const GradientVector& g, std::optional<double> scale_override = std::nullopt,
                    bool strict_side = true);

/// Undo adjust(): drop padding, multiply back, re-attach the layout.
/// restore(adjust(v)) == v bit-exactly.
GradientVector restore(const AdjustedGrid& grid, const LayerLayout& layout,
                       GradientRole role = GradientRole::Recovered);

struct Normalized {
    FlatTensor scaled;
    double scale = 1.0;
    double offset = 0.0;
};

/// Standardization to mean 0 / std 1 with a floor of 1e-8 on the scale.
/// Approximate inverse (1e-6 relative); adjust() uses the exact scheme above.
Normalized normalize(const FlatTensor& v);
FlatTensor denormalize(const Normalized& n);

} // namespace pgla
