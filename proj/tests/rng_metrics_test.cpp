#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "pgla/metrics.hpp"
#include "pgla/rng.hpp"

using namespace pgla;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double laplace_cdf(double x, double b) {
    return x < 0.0 ? 0.5 * std::exp(x / b) : 1.0 - 0.5 * std::exp(-x / b);
}

double ks_statistic(std::vector<float> xs, const std::function<double(double)>& cdf) {
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    const double n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        double c = cdf(xs[i]);
        d = std::max(d, std::fabs(c - static_cast<double>(i) / n));
        d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - c));
    }
    return d;
}

} // namespace

TEST_CASE("gaussian sampling: zero variance, determinism, moments") {
    RngState rng(1);
    FlatTensor z = sample_gaussian(rng, 0.0, 5);
    for (float v : z.data) CHECK(v == 0.0f);

    RngState a(42), b(42);
    FlatTensor va = sample_gaussian(a, 1.5, 100);
    FlatTensor vb = sample_gaussian(b, 1.5, 100);
    CHECK(va.data == vb.data);

    RngState big(7);
    FlatTensor v = sample_gaussian(big, 1.0, 100000);
    double mu = mean_of(v);
    double sd = stddev_of(v);
    CHECK(std::fabs(mu) < 0.02);
    CHECK(sd * sd > 0.98);
    CHECK(sd * sd < 1.02);

    CHECK_THROWS_AS(sample_gaussian(big, -1.0, 4), Error);
}

TEST_CASE("laplace sampling: zero scale, variance 2b^2") {
    RngState rng(3);
    FlatTensor z = sample_laplace(rng, 0.0, 3);
    for (float v : z.data) CHECK(v == 0.0f);

    RngState big(9);
    FlatTensor v = sample_laplace(big, 1.0, 100000);
    double sd = stddev_of(v);
    CHECK(sd * sd > 1.9);
    CHECK(sd * sd < 2.1);

    RngState a(5), b2(5);
    CHECK(sample_laplace(a, 0.7, 64).data == sample_laplace(b2, 0.7, 64).data);
    CHECK_THROWS_AS(sample_laplace(big, -0.1, 4), Error);
}

TEST_CASE("distribution sanity via Kolmogorov-Smirnov") {
    RngState rng(11);
    FlatTensor g = sample_gaussian(rng, 1.0, 10000);
    CHECK(ks_statistic(g.data, normal_cdf) < 0.02);

    RngState rng2(13);
    FlatTensor l = sample_laplace(rng2, 1.0, 10000);
    CHECK(ks_statistic(l.data, [](double x) { return laplace_cdf(x, 1.0); }) < 0.02);
}

TEST_CASE("derived streams are independent and reproducible") {
    RngState root(100);
    RngState s1 = root.derive(1, 2);
    RngState s2 = root.derive(1, 3);
    RngState s1b = root.derive(1, 2);
    FlatTensor a = sample_gaussian(s1, 1.0, 32);
    FlatTensor b = sample_gaussian(s2, 1.0, 32);
    FlatTensor c = sample_gaussian(s1b, 1.0, 32);
    CHECK(a.data == c.data);
    CHECK(a.data != b.data);
}

TEST_CASE("cosine similarity: identity, orthogonality, analytic value") {
    FlatTensor v = FlatTensor::vector_of({0.3f, -1.2f, 4.0f});
    CHECK(cosine_similarity(v, v).value == doctest::Approx(1.0).epsilon(1e-12));

    FlatTensor e1 = FlatTensor::vector_of({1.0f, 0.0f});
    FlatTensor e2 = FlatTensor::vector_of({0.0f, 1.0f});
    CHECK(cosine_similarity(e1, e2).value == doctest::Approx(0.0));

    FlatTensor a = FlatTensor::vector_of({1.0f, 1.0f});
    CHECK(std::fabs(cosine_similarity(a, e1).value - 0.70711) < 1e-5);

    // scaling property
    FlatTensor k3 = FlatTensor::vector_of({0.9f, -3.6f, 12.0f});
    CHECK(cosine_similarity(v, k3).value == doctest::Approx(1.0).epsilon(1e-7));
    FlatTensor km = FlatTensor::vector_of({-0.3f, 1.2f, -4.0f});
    CHECK(cosine_similarity(v, km).value == doctest::Approx(-1.0).epsilon(1e-7));

    FlatTensor zero = FlatTensor::vector_of({0.0f, 0.0f});
    CHECK_THROWS_AS(cosine_similarity(zero, e1), Error);
    CHECK_THROWS_AS(cosine_similarity(e1, FlatTensor::vector_of({1.0f})), Error);
}

TEST_CASE("psnr: cap, analytic value, monotonicity, monte carlo") {
    FlatTensor v = FlatTensor::vector_of({0.5f, 0.25f, 0.75f});
    CHECK(psnr(v, v, 1.0).value == 100.0);

    // MSE 0.01 with peak 1 -> 20 dB
    FlatTensor ref = FlatTensor::vector_of(std::vector<float>(100, 0.0f));
    std::vector<float> off(100, 0.1f);
    CHECK(psnr(ref, FlatTensor::vector_of(off), 1.0).value == doctest::Approx(20.0).epsilon(1e-6));

    // monotone decreasing in MSE
    std::vector<float> off2(100, 0.2f);
    CHECK(psnr(ref, FlatTensor::vector_of(off2), 1.0).value < 20.0);

    CHECK_THROWS_AS(psnr(ref, v, 1.0), Error);
    CHECK_THROWS_AS(psnr(v, v, 0.0), Error);

    // ref ~ U(0,1), test = ref + N(0, 0.1^2), peak 1 -> 20 +- 0.5 dB
    RngState rng(21);
    std::vector<float> r(10000), t(10000);
    for (size_t i = 0; i < r.size(); ++i) {
        r[i] = static_cast<float>(rng.next_unit_open());
        t[i] = r[i] + static_cast<float>(0.1 * rng.next_gaussian());
    }
    double db = psnr(FlatTensor::vector_of(r), FlatTensor::vector_of(t), 1.0).value;
    CHECK(db > 19.5);
    CHECK(db < 20.5);
}

TEST_CASE("gradient peak falls back for constant reference") {
    FlatTensor flat = FlatTensor::vector_of({2.0f, 2.0f, 2.0f});
    CHECK(gradient_peak(flat) == doctest::Approx(2.0));
    FlatTensor var = FlatTensor::vector_of({-1.0f, 3.0f});
    CHECK(gradient_peak(var) == doctest::Approx(4.0));
}
