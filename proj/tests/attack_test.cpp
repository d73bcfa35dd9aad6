#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pgla/attack.hpp"
#include "pgla/pipeline.hpp"

using namespace pgla;

namespace {

ModelSpec two_dense(std::vector<uint32_t> input, int hidden, int classes) {
    ModelSpec s;
    s.input_shape = std::move(input);
    s.classes = classes;
    s.layers = {LayerDesc::dense(hidden), LayerDesc::activation(Activation::Sigmoid), LayerDesc::dense(classes)};
    return s;
}

} // namespace

TEST_CASE("structure inference reproduces the wire layout") {
    ModelSpec spec = two_dense({784}, 32, 10);
    ModelInstance m = build_model(spec, RngState(1));
    CHECK(m.layout.total() == 25450);

    GradientVector g(FlatTensor::vector_of(std::vector<float>(25450, 0.5f)), m.layout, GradientRole::Perturbed);
    LayerLayout inferred = infer_structure(g);
    CHECK(inferred.same_shape_as(m.layout));

    ModelSpec derived = derive_model_spec(inferred);
    CHECK(derived.classes == 10);
    CHECK(derived.input_shape == std::vector<uint32_t>{784});
    CHECK(derived.build_layout().same_shape_as(m.layout));
}

TEST_CASE("single weight matrix maps to a bias-free dense layer") {
    LayerLayout l;
    l.push("w", {4, 9});
    ModelSpec spec = derive_model_spec(l);
    REQUIRE(spec.layers.size() == 1);
    CHECK(spec.layers[0].kind == LayerKind::Dense);
    CHECK_FALSE(spec.layers[0].bias);
    CHECK(spec.classes == 4);
    CHECK(spec.build_layout().same_shape_as(l));
}

TEST_CASE("unrecognizable layouts raise structure errors") {
    LayerLayout rank3;
    rank3.push("w", {2, 3, 4});
    CHECK_THROWS_AS(derive_model_spec(rank3), Error);

    LayerLayout conv_first;
    conv_first.push("w", {4, 1, 3, 3});
    conv_first.push("b", {4});
    conv_first.push("w2", {2, 4 * 6 * 6});
    conv_first.push("b2", {2});
    CHECK_THROWS_AS(derive_model_spec(conv_first), Error); // needs input hint

    SurrogateOptions opts;
    opts.input_shape_hint = {1, 8, 8};
    ModelSpec spec = derive_model_spec(conv_first, opts);
    CHECK(spec.classes == 2);
    CHECK(spec.build_layout().same_shape_as(conv_first));
}

TEST_CASE("harvest: one gradient per probe, zero-input structure") {
    ModelSpec spec = two_dense({16}, 6, 4);
    ModelInstance m = build_model(spec, RngState(3));

    ProbeDataset one;
    one.samples.push_back({FlatTensor::vector_of(std::vector<float>(16, 0.25f)), 1});
    SurrogateHarvest h1 = harvest_surrogate_gradients(m.layout, one, RngState(4));
    CHECK(h1.gradients.size() == 1);
    CHECK(h1.gradients[0].role == GradientRole::Surrogate);
    CHECK(h1.gradients[0].layout.same_shape_as(m.layout));

    ProbeDataset zeros;
    zeros.samples.push_back({FlatTensor::vector_of(std::vector<float>(16, 0.0f)), 0});
    SurrogateHarvest hz = harvest_surrogate_gradients(m.layout, zeros, RngState(5));
    const LayerEntry& w0 = hz.surrogate.layout.entries[0];
    for (uint64_t i = 0; i < w0.length; ++i) CHECK(hz.gradients[0].values[w0.offset + i] == 0.0f);

    ProbeDataset empty;
    CHECK_THROWS_AS(harvest_surrogate_gradients(m.layout, empty, RngState(6)), Error);
}

TEST_CASE("harvested gradient statistics stabilize") {
    ModelSpec spec = two_dense({16}, 6, 4);
    ModelInstance m = build_model(spec, RngState(7));
    ProbeDataset probe = make_synthetic_dataset(500, 4, 1, 4, RngState(8));
    SurrogateHarvest h = harvest_surrogate_gradients(m.layout, probe, RngState(9));

    double acc = 0.0;
    size_t n = 0;
    for (const auto& g : h.gradients) {
        CHECK(g.values.all_finite());
        acc += stddev_of(g.values);
        ++n;
    }
    double mean_std = acc / static_cast<double>(n);
    CHECK(mean_std > 1e-6);
    CHECK(std::isfinite(mean_std));
}

TEST_CASE("inversion: fixed point at the generating pair") {
    ModelSpec spec = two_dense({12}, 5, 3);
    ModelInstance m = build_model(spec, RngState(11));
    RngState xr(12);
    std::vector<float> xv(12);
    for (auto& v : xv) v = static_cast<float>(xr.next_unit_open());
    FlatTensor x_true = FlatTensor::vector_of(xv);
    const int y_true = 2;
    auto target = loss_and_grad_params(m, x_true, y_true).second;

    // initialize at the truth: strongly peaked logits on the true label
    FlatTensor y_init = FlatTensor::vector_of({-30.0f, -30.0f, 30.0f});
    InversionConfig cfg;
    cfg.iterations = 1;
    InversionResult res = invert_gradients(target, m, cfg, RngState(13), &x_true, &y_init);
    CHECK(res.best_loss < 1e-6);
    CHECK(res.y_best == y_true);
    CHECK_FALSE(res.failed);
}

TEST_CASE("inversion trace is nonincreasing and converges on a tiny net") {
    ModelSpec spec = two_dense({16}, 5, 3);
    ModelInstance m = build_model(spec, RngState(17));
    RngState xr(18);
    std::vector<float> xv(16);
    for (auto& v : xv) v = static_cast<float>(xr.next_unit_open());
    FlatTensor x_true = FlatTensor::vector_of(xv);
    auto target = loss_and_grad_params(m, x_true, 1).second;

    InversionConfig cfg;
    cfg.iterations = 500;
    cfg.step = 0.1;
    InversionResult res = invert_gradients(target, m, cfg, RngState(19));
    CHECK_FALSE(res.failed);
    for (size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] <= res.trace[i - 1]);
    CHECK(res.best_loss < 1e-2);

    // the recovered image should beat the random initialization
    RngState ir(19);
    std::vector<float> x0(16);
    for (auto& v : x0) v = static_cast<float>(ir.next_unit_open());
    double before = psnr(x_true, FlatTensor::vector_of(x0), 1.0).value;
    double after = psnr(x_true, res.x_best, 1.0).value;
    CHECK(after > before);
}

TEST_CASE("inversion rejects mismatched layouts") {
    ModelSpec spec = two_dense({12}, 5, 3);
    ModelInstance m = build_model(spec, RngState(23));
    ModelSpec other = two_dense({12}, 4, 3);
    ModelInstance o = build_model(other, RngState(23));
    auto target = loss_and_grad_params(o, FlatTensor::vector_of(std::vector<float>(12, 0.1f)), 0).second;
    InversionConfig cfg;
    CHECK_THROWS_AS(invert_gradients(target, m, cfg, RngState(1)), Error);
}

TEST_CASE("evaluate: caps, label accuracy, absent ground truth") {
    LayerLayout l;
    l.push("p", {8});
    RngState rng(29);
    GradientVector clean(sample_gaussian(rng, 1.0, 8), l, GradientRole::Clean);
    GradientVector same = clean;
    same.role = GradientRole::Recovered;

    AttackReport r = evaluate(&same, &clean, nullptr, nullptr, std::nullopt, std::nullopt);
    REQUIRE(r.cos_g.has_value());
    CHECK(*r.cos_g == doctest::Approx(1.0));
    CHECK(*r.psnr_g == 100.0);
    CHECK_FALSE(r.psnr_i.has_value());
    CHECK_FALSE(r.lra.has_value());

    FlatTensor img = FlatTensor::vector_of({0.2f, 0.8f});
    AttackReport r2 = evaluate(nullptr, nullptr, &img, &img, 3, 3);
    CHECK(*r2.psnr_i == 100.0);
    CHECK(*r2.lra == 1.0);
    AttackReport r3 = evaluate(nullptr, nullptr, nullptr, nullptr, 2, 3);
    CHECK(*r3.lra == 0.0);
}

TEST_CASE("run_pgla: M = 0 identity and provenance bookkeeping") {
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    std::vector<AdjustedGrid> data;
    RngState vr(31);
    for (int i = 0; i < 8; ++i) {
        AdjustedGrid a;
        a.grid = FlatTensor({1u, 4u, 4u}, std::vector<float>(16, 0.0f));
        for (auto& v : a.grid.data) v = static_cast<float>(vr.next_gaussian());
        a.original_length = 15;
        a.padding = 1;
        a.scale = 1.0;
        data.push_back(std::move(a));
    }
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch = 4;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 5;
    TrainResult trained = train(data, nullptr, cfg, s, RngState(32));

    LayerLayout l;
    l.push("p", {15});
    RngState gr(33);
    GradientVector shared(sample_gaussian(gr, 1.0, 15), l, GradientRole::Perturbed);

    PglaMode mode;
    mode.M = 0.0;
    RngState arng(34);
    PglaResult res = run_pgla(shared, trained.predictor, mode, arng);
    CHECK(res.recovered.values.data == shared.values.data);
    CHECK(res.provenance.t_prime == 0);
    CHECK(res.provenance.c == doctest::Approx(1.0));

    // provenance T' consistent with the M mapping
    PglaMode m2;
    m2.M = 0.8;
    RngState arng2(35);
    PglaResult res2 = run_pgla(shared, trained.predictor, m2, arng2);
    CHECK(res2.provenance.t_prime == map_M_to_Tprime(0.8, s).t_prime);

    PglaMode none;
    CHECK_THROWS_AS(run_pgla(shared, trained.predictor, none, arng), Error);
    PglaMode both;
    both.M = 0.5;
    both.c_override = 0.5;
    CHECK_THROWS_AS(run_pgla(shared, trained.predictor, both, arng), Error);
}

TEST_CASE("attack path never consumes evaluation-side cleartext") {
    // identical attack inputs with different clean gradients must produce
    // identical recoveries; clean data only enters evaluate()
    NoiseSchedule s = make_schedule(50, 1e-3, 0.05);
    std::vector<AdjustedGrid> data;
    RngState vr(41);
    for (int i = 0; i < 8; ++i) {
        AdjustedGrid a;
        a.grid = FlatTensor({1u, 4u, 4u}, std::vector<float>(16, 0.0f));
        for (auto& v : a.grid.data) v = static_cast<float>(vr.next_gaussian());
        a.original_length = 15;
        a.padding = 1;
        a.scale = 1.0;
        data.push_back(std::move(a));
    }
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch = 4;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 5;
    TrainResult trained = train(data, nullptr, cfg, s, RngState(42));

    LayerLayout l;
    l.push("p", {15});
    RngState gr(43);
    GradientVector shared(sample_gaussian(gr, 1.0, 15), l, GradientRole::Perturbed);

    PglaMode mode;
    mode.known_sigma = 0.5;
    RngState r1(44), r2(44);
    PglaResult a = run_pgla(shared, trained.predictor, mode, r1);
    PglaResult b = run_pgla(shared, trained.predictor, mode, r2);
    CHECK(a.recovered.values.data == b.recovered.values.data);
}
