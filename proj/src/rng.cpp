#include "pgla/rng.hpp"

#include <cmath>

namespace pgla {

namespace {

uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

double RngState::next_gaussian() {
    // Box-Muller, cosine branch. Consumes exactly two counter steps.
    double u1 = next_unit_pos();
    double u2 = next_unit_pos();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double RngState::next_laplace(double b) {
    double q = next_unit_open() - 0.5; // (-1/2, 1/2)
    double s = q < 0.0 ? -1.0 : 1.0;
    return -b * s * std::log(1.0 - 2.0 * std::fabs(q));
}

RngState RngState::derive(uint64_t a, uint64_t b, uint64_t c) const {
    uint64_t s = seed;
    s = mix64(s ^ (a + 0x9E3779B97F4A7C15ull));
    s = mix64(s ^ (b + 0xC2B2AE3D27D4EB4Full));
    s = mix64(s ^ (c + 0x165667B19E3779F9ull));
    return RngState(s, 0);
}

FlatTensor sample_gaussian(RngState& rng, double sigma, size_t n) {
    if (sigma < 0.0) throw Error(ErrorKind::Parameter, "sample_gaussian: negative sigma");
    if (n < 1) throw Error(ErrorKind::Parameter, "sample_gaussian: n must be >= 1");
    std::vector<float> out(n);
    if (sigma == 0.0) {
        return FlatTensor::vector_of(std::move(out));
    }
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(sigma * rng.next_gaussian());
    return FlatTensor::vector_of(std::move(out));
}

FlatTensor sample_laplace(RngState& rng, double b, size_t n) {
    if (b < 0.0) throw Error(ErrorKind::Parameter, "sample_laplace: negative scale");
    if (n < 1) throw Error(ErrorKind::Parameter, "sample_laplace: n must be >= 1");
    std::vector<float> out(n);
    if (b == 0.0) {
        return FlatTensor::vector_of(std::move(out));
    }
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(rng.next_laplace(b));
    return FlatTensor::vector_of(std::move(out));
}

} // namespace pgla
