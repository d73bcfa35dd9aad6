#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pgla/diffusion.hpp"
#include "pgla/metrics.hpp"

using namespace pgla;

namespace {

FlatTensor const_grid(uint32_t side, float v) {
    return FlatTensor({1u, side, side}, std::vector<float>(static_cast<size_t>(side) * side, v));
}

std::vector<AdjustedGrid> zero_dataset(uint32_t side, size_t n) {
    std::vector<AdjustedGrid> out;
    for (size_t i = 0; i < n; ++i) {
        AdjustedGrid a;
        a.grid = const_grid(side, 0.0f);
        a.original_length = static_cast<uint64_t>(side) * side - 1;
        a.padding = 1;
        a.scale = 1.0;
        out.push_back(std::move(a));
    }
    return out;
}

} // namespace

TEST_CASE("make_schedule: endpoints, monotonicity, independent cumprod oracle") {
    NoiseSchedule one = make_schedule(1, 0.5, 0.5);
    CHECK(one.gamma[0] == 1.0);
    CHECK(one.gamma[1] == doctest::Approx(0.5).epsilon(1e-15));

    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    for (int t = 1; t <= s.T; ++t) {
        CHECK(s.alpha[t] > 0.0);
        CHECK(s.alpha[t] < 1.0);
        CHECK(s.gamma[t] < s.gamma[t - 1]);
    }
    CHECK(s.gamma[s.T] > 0.0);

    // oracle: long-double running product over the analytic beta line
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
        prod *= (1.0L - beta);
    }
    CHECK(std::fabs(static_cast<double>(prod) - s.gamma[1000]) < 1e-12);
    CHECK(s.gamma[1000] == doctest::Approx(4.0e-5).epsilon(0.2)); // vanishing signal

    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.5, 0.2), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.5, 1.0), Error);
}

TEST_CASE("q_sample: analytic point, small-t limit, range check") {
    NoiseSchedule s = make_schedule(1, 0.75, 0.75); // gamma_1 = 0.25
    FlatTensor x0 = const_grid(1, 1.0f);
    FlatTensor eps = const_grid(1, 0.0f);
    CHECK(q_sample(x0, 1, eps, s)[0] == doctest::Approx(0.5f));

    NoiseSchedule s2 = make_schedule(1000, 1e-4, 0.02);
    FlatTensor x02 = const_grid(2, 2.0f);
    FlatTensor eps2 = const_grid(2, 1.0f);
    FlatTensor out = q_sample(x02, 1, eps2, s2);
    for (size_t i = 0; i < out.size(); ++i) CHECK(std::fabs(out[i] - 2.0f) < 0.03);

    CHECK_THROWS_AS(q_sample(x02, 0, eps2, s2), Error);
    CHECK_THROWS_AS(q_sample(x02, 1001, eps2, s2), Error);
}

TEST_CASE("iterated single-step corruption matches the closed-form marginal") {
    NoiseSchedule s = make_schedule(200, 1e-3, 0.05);
    const int t_check = 50;
    const int n = 20000;
    RngState rng(31);
    double sum = 0.0, sum_sq = 0.0;
    const double x0 = 1.0;
    for (int i = 0; i < n; ++i) {
        double x = x0;
        for (int t = 1; t <= t_check; ++t)
            x = std::sqrt(s.alpha[t]) * x + std::sqrt(1.0 - s.alpha[t]) * rng.next_gaussian();
        sum += x;
        sum_sq += x * x;
    }
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    CHECK(std::fabs(mean - std::sqrt(s.gamma[t_check]) * x0) < 0.02);
    CHECK(var / (1.0 - s.gamma[t_check]) > 0.95);
    CHECK(var / (1.0 - s.gamma[t_check]) < 1.05);
}

TEST_CASE("posterior parameters: endpoint and oracle agreement") {
    NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
    FlatTensor x0 = const_grid(2, 0.7f);
    FlatTensor xt = const_grid(2, -0.2f);

    PosteriorParams p1 = posterior_params(x0, xt, 1, s);
    CHECK(p1.sigma_sq == 0.0);
    CHECK(p1.mu.data == x0.data);

    // frozen values computed from the conditioning oracle below
    PosteriorCoeffs c = posterior_coeffs(0.99, 0.9, 0.891);
    CHECK(c.coef_x0 == doctest::Approx(0.0870352).epsilon(1e-5));
    CHECK(c.coef_xt == doctest::Approx(0.91283251).epsilon(1e-7));
    CHECK(c.sigma_sq == doctest::Approx(0.00917431).epsilon(1e-6));

    RngState rng(33);
    for (int i = 0; i < 50; ++i) {
        double alpha = 0.5 + 0.499 * rng.next_unit_open();
        double gprev = 0.05 + 0.9 * rng.next_unit_open();
        double gt = alpha * gprev;
        PosteriorCoeffs got = posterior_coeffs(alpha, gprev, gt);
        // explicit bivariate-gaussian conditioning on (X_{t-1}, X_t) | X0
        double var1 = 1.0 - gprev;
        double cov = std::sqrt(alpha) * var1;
        double var2 = 1.0 - gt;
        double at = cov / var2;
        double a0 = std::sqrt(gprev) - at * std::sqrt(gt);
        double vc = var1 - cov * cov / var2;
        CHECK(std::fabs(got.coef_xt - at) < 1e-10);
        CHECK(std::fabs(got.coef_x0 - a0) < 1e-10);
        CHECK(std::fabs(got.sigma_sq - vc) < 1e-10);
    }

    PosteriorCoeffs printed = posterior_coeffs(0.99, 0.9, 0.891, true);
    CHECK(printed.coef_xt == doctest::Approx(0.99 * 0.1 / 0.109).epsilon(1e-12));
}

TEST_CASE("M to T' mapping: endpoints, bracket, frozen value") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    CHECK(map_M_to_Tprime(0.0, s).t_prime == 0);
    CHECK(map_M_to_Tprime(1e9, s).t_prime == s.T);

    auto b = map_M_to_Tprime(0.1, s);
    CHECK(std::abs(b.t_prime - 28) <= 1);

    int prev = 0;
    for (int i = 0; i <= 100; ++i) {
        double M = 5.0 * i / 100.0;
        auto bb = map_M_to_Tprime(M, s);
        CHECK(bb.t_prime >= prev);
        prev = bb.t_prime;
        if (bb.t_prime > 0 && bb.t_prime < s.T) {
            double target = 1.0 / (1.0 + M * M);
            CHECK(s.gamma[bb.t_lo] > target);
            CHECK(target >= s.gamma[bb.t_hi]);
        }
    }
    CHECK_THROWS_AS(map_M_to_Tprime(-0.5, s), Error);
}

TEST_CASE("entry point: known and blind modes") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    AdjustedGrid grid;
    grid.grid = const_grid(3, 2.0f);
    grid.original_length = 8;
    grid.padding = 1;
    grid.scale = 1.0;

    DenoiseRequest r0;
    r0.M = 0.0;
    EntryPoint e0 = entry_point(grid, r0, s);
    CHECK(e0.c == doctest::Approx(1.0));
    CHECK(e0.t_prime == 0);
    CHECK(e0.x_start.data == grid.grid.data);

    DenoiseRequest r1;
    r1.M = 1.0;
    EntryPoint e1 = entry_point(grid, r1, s);
    CHECK(e1.c == doctest::Approx(0.70711).epsilon(1e-5));

    DenoiseRequest r3;
    r3.M = 3.0;
    CHECK(entry_point(grid, r3, s).c == doctest::Approx(0.31623).epsilon(1e-5));

    DenoiseRequest rb;
    rb.c_override = 0.5;
    EntryPoint eb = entry_point(grid, rb, s);
    CHECK(eb.c == 0.5);
    CHECK(s.gamma[eb.t_prime] <= 0.25);
    CHECK(s.gamma[eb.t_prime - 1] > 0.25);

    DenoiseRequest bad;
    bad.c_override = 1.5;
    CHECK_THROWS_AS(entry_point(grid, bad, s), Error);
    DenoiseRequest both;
    both.M = 1.0;
    both.c_override = 0.5;
    CHECK_THROWS_AS(entry_point(grid, both, s), Error);
    DenoiseRequest neither;
    CHECK_THROWS_AS(entry_point(grid, neither, s), Error);
}

TEST_CASE("reverse sampling: T'=0 identity, perfect-predictor inversion, draw counting") {
    NoiseSchedule s = make_schedule(1, 0.19, 0.19);
    RngState rng(41);
    FlatTensor x0 = const_grid(2, 0.0f);
    for (auto& v : x0.data) v = static_cast<float>(rng.next_gaussian());
    FlatTensor eps = const_grid(2, 0.0f);
    for (auto& v : eps.data) v = static_cast<float>(rng.next_gaussian());
    FlatTensor x1 = q_sample(x0, 1, eps, s);

    RngState srng(42);
    FlatTensor same = sample_reverse_fn(x1, 0, s, [&](const FlatTensor&, int) { return eps; }, srng);
    CHECK(same.data == x1.data);

    int calls = 0;
    RngState srng2(43);
    FlatTensor rec = sample_reverse_fn(
        x1, 1, s,
        [&](const FlatTensor&, int) {
            ++calls;
            return eps;
        },
        srng2);
    CHECK(calls == 1);
    CHECK(srng2.position == 0); // z = 0 at the final step: no draws
    for (size_t i = 0; i < rec.size(); ++i) CHECK(rec[i] == doctest::Approx(x0[i]).epsilon(1e-5));

    // draw counting across a longer chain: z is drawn T'-1 times
    NoiseSchedule s2 = make_schedule(50, 1e-3, 0.05);
    calls = 0;
    RngState srng3(44);
    FlatTensor junk = sample_reverse_fn(
        x1, 7, s2,
        [&](const FlatTensor& x, int) {
            ++calls;
            return x;
        },
        srng3);
    CHECK(calls == 7);
    CHECK(srng3.position == 6 * 2 * static_cast<uint64_t>(x1.size())); // two uniforms per gaussian
}

TEST_CASE("training: all-zero grids beat the constant-predictor baseline") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    auto data = zero_dataset(4, 16);
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch = 8;
    cfg.hidden = 16;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.25;
    cfg.log_every = 10;
    TrainResult res = train(data, nullptr, cfg, s, RngState(51));
    REQUIRE(!res.loss_trace.empty());
    for (float v : res.loss_trace) CHECK(std::isfinite(v));

    // baseline oracle: the output layer starts at zero, so a run that barely
    // moves is the best-constant (zero) predictor scored on the same held-out
    // draws (same seed -> same split and corruption)
    TrainConfig base = cfg;
    base.steps = 1;
    base.lr = 1e-12;
    TrainResult constant = train(data, nullptr, base, s, RngState(51));
    CHECK(res.val_loss <= 1.05 * constant.val_loss);
    CHECK(res.predictor.spec.grid_side == 4);
    CHECK(res.predictor.params.size() == res.predictor.layout.total());
}

TEST_CASE("objective terms are invariant under dataset permutation") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    std::vector<AdjustedGrid> data = zero_dataset(4, 8);
    RngState vr(52);
    for (auto& d : data)
        for (auto& v : d.grid.data) v = static_cast<float>(vr.next_gaussian());

    TrainConfig cfg;
    cfg.steps = 30;
    cfg.batch = 4;
    cfg.hidden = 12;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 10;
    TrainResult res = train(data, nullptr, cfg, s, RngState(53));

    // fixed predictor: each item's loss depends only on the item and its own
    // (t, eps) draw, so permuting the dataset permutes the loss terms and the
    // double-accumulated objective is unchanged
    auto item_loss = [&](const AdjustedGrid& g, uint64_t key) {
        RngState r(key);
        int t = static_cast<int>(r.next_u64() % 50) + 1;
        FlatTensor eps = g.grid;
        for (auto& v : eps.data) v = static_cast<float>(r.next_gaussian());
        return noise_prediction_loss(res.predictor, g, nullptr, t, eps);
    };
    std::vector<double> forward_losses, reversed_losses;
    for (size_t i = 0; i < data.size(); ++i) forward_losses.push_back(item_loss(data[i], 100 + i));
    for (size_t i = 0; i < data.size(); ++i)
        reversed_losses.push_back(item_loss(data[data.size() - 1 - i], 100 + (data.size() - 1 - i)));
    std::sort(forward_losses.begin(), forward_losses.end());
    std::sort(reversed_losses.begin(), reversed_losses.end());
    CHECK(forward_losses == reversed_losses);
}

TEST_CASE("conditional training with informative condition beats unconditional") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    RngState vr(54);
    std::vector<AdjustedGrid> data = zero_dataset(4, 24);
    for (auto& d : data)
        for (auto& v : d.grid.data) v = static_cast<float>(vr.next_gaussian());
    std::vector<AdjustedGrid> conds = data; // condition = the clean grid itself

    TrainConfig cfg;
    cfg.steps = 400;
    cfg.batch = 8;
    cfg.hidden = 24;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.25;
    cfg.log_every = 100;

    TrainResult uncond = train(data, nullptr, cfg, s, RngState(55));
    cfg.conditional = true;
    TrainResult cond = train(data, &conds, cfg, s, RngState(55));
    CHECK(cond.val_loss < uncond.val_loss);
}

TEST_CASE("weighted-loss mode trains with finite losses") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    auto data = zero_dataset(4, 8);
    RngState vr(61);
    for (auto& d : data)
        for (auto& v : d.grid.data) v = static_cast<float>(vr.next_gaussian());
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.batch = 4;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 10;
    cfg.weighted_loss = true;
    TrainResult res = train(data, nullptr, cfg, s, RngState(62));
    REQUIRE(!res.loss_trace.empty());
    for (float v : res.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("train input validation") {
    NoiseSchedule s = make_schedule(10, 1e-3, 0.05);
    TrainConfig cfg;
    cfg.steps = 1;
    std::vector<AdjustedGrid> empty;
    CHECK_THROWS_AS(train(empty, nullptr, cfg, s, RngState(1)), Error);

    auto data = zero_dataset(4, 4);
    cfg.conditional = true;
    CHECK_THROWS_AS(train(data, nullptr, cfg, s, RngState(1)), Error);
}

TEST_CASE("denoise: M = 0 is the identity path") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    auto data = zero_dataset(4, 8);
    RngState vr(56);
    for (auto& d : data)
        for (auto& v : d.grid.data) v = static_cast<float>(vr.next_gaussian());
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch = 4;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 5;
    TrainResult res = train(data, nullptr, cfg, s, RngState(57));

    LayerLayout l;
    l.push("p", {15});
    RngState gr(58);
    GradientVector g(sample_gaussian(gr, 1.0, 15), l, GradientRole::Perturbed);
    DenoiseRequest req;
    req.M = 0.0;
    RngState drng(59);
    DenoiseOutcome out = denoise(g, res.predictor, req, drng);
    CHECK(out.recovered.values.data == g.values.data);
    CHECK(out.recovered.role == GradientRole::Recovered);
    CHECK(out.t_prime == 0);
    CHECK(out.recovered.layout.same_shape_as(g.layout));
}
