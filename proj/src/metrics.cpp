#include "pgla/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace pgla {

MetricValue cosine_similarity(const FlatTensor& a, const FlatTensor& b) {
    require_same_length(a, b, "cosine_similarity");
    if (a.size() == 0) throw Error(ErrorKind::Input, "cosine_similarity: empty input");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0)
        throw Error(ErrorKind::UndefinedMetric, "cosine_similarity: zero-norm input");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return {MetricKind::Cosine, std::clamp(c, -1.0, 1.0)};
}

MetricValue mse(const FlatTensor& reference, const FlatTensor& test) {
    require_same_length(reference, test, "mse");
    if (reference.size() == 0) throw Error(ErrorKind::Input, "mse: empty input");
    double s = 0.0;
    for (size_t i = 0; i < reference.size(); ++i) {
        double d = static_cast<double>(reference[i]) - test[i];
        s += d * d;
    }
    return {MetricKind::Mse, s / static_cast<double>(reference.size())};
}

MetricValue psnr(const FlatTensor& reference, const FlatTensor& test, double peak) {
    if (peak <= 0.0) throw Error(ErrorKind::Parameter, "psnr: peak must be positive");
    double m = mse(reference, test).value;
    if (m == 0.0) return {MetricKind::PsnrDb, kPsnrCapDb};
    double db = 10.0 * std::log10(peak * peak / m);
    return {MetricKind::PsnrDb, std::min(db, kPsnrCapDb)};
}

double gradient_peak(const FlatTensor& reference) {
    if (reference.size() == 0) throw Error(ErrorKind::Input, "gradient_peak: empty input");
    auto [mn, mx] = std::minmax_element(reference.data.begin(), reference.data.end());
    double p = static_cast<double>(*mx) - static_cast<double>(*mn);
    // Constant reference degenerates; fall back to its magnitude so psnr stays defined.
    if (p <= 0.0) p = std::max(std::fabs(static_cast<double>(*mx)), 1e-12);
    return p;
}

} // namespace pgla
