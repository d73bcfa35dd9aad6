#pragma once

#include <cstdint>

#include "pgla/tensor.hpp"

namespace pgla {

/// Counter-based deterministic generator. The i-th output is a pure function
/// of (seed, i): splitmix64 finalizer applied to seed + i * golden gamma.
/// Streams for (client, round, ...) are derived by hashing tags into a new
/// seed, so parallel workers never share state.
///
/// Gaussian draws use Box-Muller (two uniforms per draw, cosine branch);
/// Laplace draws use the inverse CDF. Both consume a fixed number of counter
/// steps per draw, so any draw sequence is replayable from (seed, position).
struct RngState {
    uint64_t seed = 0;
    uint64_t position = 0;

    explicit RngState(uint64_t s = 0, uint64_t pos = 0) : seed(s), position(pos) {}

    uint64_t next_u64() {
        uint64_t z = seed + (++position) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1]; never returns 0 so log() is safe.
    double next_unit_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1p-53; }

    /// Uniform in (0, 1), symmetric around 1/2.
    double next_unit_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53; }

    double next_gaussian();
    double next_laplace(double b);

    /// Independent substream keyed by up to three tags.
    RngState derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const;
};

/// n i.i.d. draws from N(0, sigma^2). sigma = 0 yields exact zeros.
FlatTensor sample_gaussian(RngState& rng, double sigma, size_t n);

/// n i.i.d. draws from Laplace(0, b) via inverse CDF.
FlatTensor sample_laplace(RngState& rng, double b, size_t n);

} // namespace pgla
