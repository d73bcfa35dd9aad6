#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pgla/config.hpp"
#include "pgla/io.hpp"
#include "pgla/pipeline.hpp"

using namespace pgla;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("pgla_test_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

GradientVector sample_grad(uint64_t seed, uint64_t n) {
    LayerLayout l;
    l.push("dense0.weight", {static_cast<uint32_t>(n / 2), 2});
    RngState rng(seed);
    return GradientVector(sample_gaussian(rng, 0.7, n), l, GradientRole::Perturbed);
}

void write_idx_fixture(const std::string& img_path, const std::string& lbl_path, uint32_t n, uint32_t side,
                       bool corrupt_magic = false, bool label_mismatch = false) {
    auto be32 = [](std::string& s, uint32_t v) {
        s.push_back(static_cast<char>((v >> 24) & 0xff));
        s.push_back(static_cast<char>((v >> 16) & 0xff));
        s.push_back(static_cast<char>((v >> 8) & 0xff));
        s.push_back(static_cast<char>(v & 0xff));
    };
    std::string img;
    be32(img, corrupt_magic ? 0x00000804u : 0x00000803u);
    be32(img, n);
    be32(img, side);
    be32(img, side);
    for (uint32_t i = 0; i < n * side * side; ++i) img.push_back(static_cast<char>(i % 256));
    atomic_write_bytes(img_path, img);

    std::string lbl;
    be32(lbl, 0x00000801u);
    be32(lbl, label_mismatch ? n + 1 : n);
    for (uint32_t i = 0; i < (label_mismatch ? n + 1 : n); ++i) lbl.push_back(static_cast<char>(i % 10));
    atomic_write_bytes(lbl_path, lbl);
}

} // namespace

TEST_CASE("gradient file: bit-exact roundtrip with stamp and role") {
    TempDir dir;
    GradientVector g = sample_grad(3, 40);
    FileStamp stamp{123, 0xdeadbeefull};
    write_gradient_file(dir.file("g.pgrd"), g, stamp);
    auto rt = read_gradient_file(dir.file("g.pgrd"));
    CHECK(rt.gradient.values.data == g.values.data);
    CHECK(rt.gradient.role == GradientRole::Perturbed);
    CHECK(rt.gradient.layout.same_shape_as(g.layout));
    CHECK(rt.gradient.layout.entries[0].name == "dense0.weight");
    CHECK(rt.stamp.seed == 123);
    CHECK(rt.stamp.config_digest == 0xdeadbeefull);
}

TEST_CASE("gradient file: format errors carry byte offsets") {
    TempDir dir;
    GradientVector g = sample_grad(5, 16);
    write_gradient_file(dir.file("g.pgrd"), g, FileStamp{});

    std::ifstream in(dir.file("g.pgrd"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    atomic_write_bytes(dir.file("trunc.pgrd"), bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_WITH_AS(static_cast<void>(read_gradient_file(dir.file("trunc.pgrd"))),
                         doctest::Contains("at byte"), Error);

    std::string bad = bytes;
    bad[0] = 'X';
    atomic_write_bytes(dir.file("bad.pgrd"), bad);
    CHECK_THROWS_WITH_AS(static_cast<void>(read_gradient_file(dir.file("bad.pgrd"))), doctest::Contains("magic"),
                         Error);

    CHECK_THROWS_AS(static_cast<void>(read_gradient_file(dir.file("absent.pgrd"))), Error);
}

TEST_CASE("gradient set roundtrip") {
    TempDir dir;
    std::vector<GradientVector> gs;
    for (uint64_t i = 0; i < 5; ++i) gs.push_back(sample_grad(10 + i, 24));
    write_gradient_set(dir.file("set.pgrs"), gs, FileStamp{7, 8});
    auto rt = read_gradient_set(dir.file("set.pgrs"));
    REQUIRE(rt.gradients.size() == 5);
    for (size_t i = 0; i < 5; ++i) CHECK(rt.gradients[i].values.data == gs[i].values.data);
    CHECK(rt.stamp.seed == 7);
}

TEST_CASE("checkpoint: bit-exact reload") {
    TempDir dir;
    NoiseSchedule s = make_schedule(40, 1e-3, 0.05);
    std::vector<AdjustedGrid> data;
    RngState vr(51);
    for (int i = 0; i < 6; ++i) {
        AdjustedGrid a;
        a.grid = FlatTensor({1u, 4u, 4u}, std::vector<float>(16, 0.0f));
        for (auto& v : a.grid.data) v = static_cast<float>(vr.next_gaussian());
        a.original_length = 15;
        a.padding = 1;
        a.scale = 0.5;
        data.push_back(std::move(a));
    }
    TrainConfig cfg;
    cfg.steps = 8;
    cfg.batch = 4;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.time_dim = 8;
    cfg.val_fraction = 0.0;
    cfg.log_every = 4;
    TrainResult trained = train(data, nullptr, cfg, s, RngState(52));

    write_checkpoint(dir.file("p.pgdm"), trained.predictor, FileStamp{9, 10});
    auto rt = read_checkpoint(dir.file("p.pgdm"));
    CHECK(rt.predictor.params.data == trained.predictor.params.data);
    CHECK(rt.predictor.spec.grid_side == 4);
    CHECK(rt.predictor.spec.hidden == 8);
    CHECK(rt.predictor.schedule.T == 40);
    CHECK(rt.predictor.schedule.gamma == trained.predictor.schedule.gamma);
    CHECK(rt.stamp.seed == 9);

    // reloaded predictor denoises identically
    LayerLayout l;
    l.push("p", {15});
    RngState gr(53);
    GradientVector g(sample_gaussian(gr, 1.0, 15), l, GradientRole::Perturbed);
    DenoiseRequest req;
    req.M = 0.7;
    RngState r1(54), r2(54);
    DenoiseOutcome a = denoise(g, trained.predictor, req, r1);
    DenoiseOutcome b = denoise(g, rt.predictor, req, r2);
    CHECK(a.recovered.values.data == b.recovered.values.data);
}

TEST_CASE("idx loader: format law, magic and count validation") {
    TempDir dir;
    write_idx_fixture(dir.file("img.idx"), dir.file("lbl.idx"), 10, 28);
    ProbeDataset ds = load_idx_dataset(dir.file("img.idx"), dir.file("lbl.idx"), 10, 0);
    REQUIRE(ds.samples.size() == 10);
    CHECK(ds.source == ProbeSource::IdxFile);
    CHECK(ds.samples[0].x.size() == 784);
    for (float v : ds.samples[0].x.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    ProbeDataset capped = load_idx_dataset(dir.file("img.idx"), dir.file("lbl.idx"), 10, 4);
    CHECK(capped.samples.size() == 4);

    write_idx_fixture(dir.file("badimg.idx"), dir.file("lbl2.idx"), 4, 8, true);
    CHECK_THROWS_WITH_AS(static_cast<void>(load_idx_dataset(dir.file("badimg.idx"), dir.file("lbl2.idx"), 10, 0)),
                         doctest::Contains("magic"), Error);

    write_idx_fixture(dir.file("img3.idx"), dir.file("lbl3.idx"), 4, 8, false, true);
    CHECK_THROWS_AS(static_cast<void>(load_idx_dataset(dir.file("img3.idx"), dir.file("lbl3.idx"), 10, 0)), Error);
}

TEST_CASE("metrics csv: lossless roundtrip, fixed header, LF endings") {
    TempDir dir;
    std::vector<MetricsRow> rows;
    MetricsRow a;
    a.trial = 0;
    a.stage = "noised";
    a.cos_g = 0.123456789012345678;
    a.psnr_g = 31.25;
    a.seed = 77;
    a.config_digest = "00ff00ff00ff00ff";
    rows.push_back(a);
    MetricsRow b;
    b.trial = 1;
    b.stage = "invert-recovered";
    b.psnr_i = 17.5;
    b.lra = 1.0;
    b.match_loss = 3.5e-9;
    b.noise_scale_m = 0.75;
    b.t_prime = 241;
    b.c = 0.8;
    b.seed = 77;
    b.config_digest = "00ff00ff00ff00ff";
    rows.push_back(b);

    write_metrics_csv(dir.file("m.csv"), rows);
    auto rt = read_metrics_csv(dir.file("m.csv"));
    REQUIRE(rt.size() == 2);
    CHECK(rt[0].cos_g == a.cos_g);
    CHECK_FALSE(rt[0].psnr_i.has_value());
    CHECK(rt[1].match_loss == b.match_loss);
    CHECK(rt[1].t_prime == 241);
    CHECK(rt[1].stage == "invert-recovered");

    std::ifstream in(dir.file("m.csv"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(bytes.rfind(kMetricsCsvHeader, 0) == 0);
    CHECK(bytes.find('\r') == std::string::npos);
}

TEST_CASE("config: defaults parse, digest is stable, field diagnostics") {
    ExperimentConfig cfg = parse_config_json(default_config_json());
    CHECK(cfg.model.input_size() == 256);
    CHECK(cfg.train.steps == 20000);
    CHECK(cfg.digest != 0);

    ExperimentConfig cfg2 = parse_config_json(default_config_json());
    CHECK(cfg.digest == cfg2.digest);

    // a formatting-only change keeps the digest
    ExperimentConfig cfg3 = parse_config_json("  " + default_config_json());
    CHECK(cfg.digest == cfg3.digest);

    try {
        parse_config_json(R"({"model":{"input":[4],"classes":0,"layers":[{"kind":"dense","out":2}]}})");
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
        CHECK(std::string(e.what()).find("model.classes") != std::string::npos);
    }

    CHECK_THROWS_AS(parse_config_json("not json"), Error);
    CHECK_THROWS_AS(parse_config_json(R"({"model":{"input":[4],"classes":2,"layers":[{"kind":"wat"}]}})"), Error);
}

TEST_CASE("synthetic dataset: deterministic, in range") {
    ProbeDataset a = make_synthetic_dataset(8, 4, 1, 3, RngState(5));
    ProbeDataset b = make_synthetic_dataset(8, 4, 1, 3, RngState(5));
    REQUIRE(a.samples.size() == 8);
    for (size_t i = 0; i < 8; ++i) {
        CHECK(a.samples[i].x.data == b.samples[i].x.data);
        CHECK(a.samples[i].y == b.samples[i].y);
        CHECK(a.samples[i].y < 3);
        for (float v : a.samples[i].x.data) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("pipeline with zero noise reports perfect gradient metrics") {
    TempDir dir;
    std::string cfg_json = std::string(R"({
      "seed": 5, "out": ")") + dir.file("out") + R"(",
      "model": {"input": [16], "classes": 3,
        "layers": [{"kind":"dense","out":5},{"kind":"activation","fn":"sigmoid"},{"kind":"dense","out":3}]},
      "dataset": {"source":"synthetic","count":8,"image_side":4,"channels":1,"classes":3},
      "perturbation": {"mechanism":"per-layer-random","sigma":0.0,"clip":1.0},
      "schedule": {"T":50,"beta_start":1e-3,"beta_end":0.05},
      "train": {"steps":30,"batch":8,"hidden":12,"blocks":1,"time_dim":8,"val_fraction":0.0,"log_every":10},
      "harvest": {"probes":40},
      "attack": {"iterations":30,"step":0.1,"entry":"known-sigma","trials":1,"run_inversion":false}
    })";
    ExperimentConfig cfg = parse_config_json(cfg_json);
    run_pipeline(cfg);
    auto rows = read_metrics_csv(dir.file("out/metrics.csv"));
    bool saw_noised = false, saw_recovered = false;
    for (const auto& r : rows) {
        if (r.stage == "noised") {
            saw_noised = true;
            CHECK(*r.cos_g == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(*r.psnr_g == 100.0);
        }
        if (r.stage == "recovered") {
            saw_recovered = true;
            CHECK(*r.cos_g == doctest::Approx(1.0).epsilon(1e-9)); // sigma 0 -> M 0 -> identity
        }
    }
    CHECK(saw_noised);
    CHECK(saw_recovered);
}

TEST_CASE("trial results are identical at any PGLA_THREADS setting") {
    TempDir dir;
    auto cfg_for = [&](const std::string& sub) {
        return parse_config_json(std::string(R"({
          "seed": 13, "out": ")") + dir.file(sub) + R"(",
          "model": {"input": [16], "classes": 3,
            "layers": [{"kind":"dense","out":5},{"kind":"activation","fn":"sigmoid"},{"kind":"dense","out":3}]},
          "dataset": {"source":"synthetic","count":8,"image_side":4,"channels":1,"classes":3},
          "perturbation": {"mechanism":"gaussian-dp","epsilon":1.0,"delta":1e-5,"clip":1.0,"m":50},
          "schedule": {"T":50,"beta_start":1e-3,"beta_end":0.05},
          "train": {"steps":30,"batch":8,"hidden":12,"blocks":1,"time_dim":8,"val_fraction":0.0,"log_every":10},
          "harvest": {"probes":40},
          "attack": {"iterations":40,"step":0.1,"entry":"known-sigma","trials":4,"run_inversion":true}
        })");
    };
    setenv("PGLA_THREADS", "1", 1);
    run_pipeline(cfg_for("seq"));
    setenv("PGLA_THREADS", "2", 1);
    run_pipeline(cfg_for("par"));
    unsetenv("PGLA_THREADS");

    auto read_bytes = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    // metrics rows and artifacts must not depend on worker count; the config
    // digest differs (out dir is part of the config), so compare row payloads
    auto a = read_metrics_csv(dir.file("seq/metrics.csv"));
    auto b = read_metrics_csv(dir.file("par/metrics.csv"));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].stage == b[i].stage);
        CHECK(a[i].cos_g == b[i].cos_g);
        CHECK(a[i].psnr_g == b[i].psnr_g);
        CHECK(a[i].psnr_i == b[i].psnr_i);
        CHECK(a[i].match_loss == b[i].match_loss);
    }
    CHECK(read_bytes(dir.file("seq/recovered_t1.pgrd")).substr(24) ==
          read_bytes(dir.file("par/recovered_t1.pgrd")).substr(24)); // past the stamp
}

TEST_CASE("eval refuses mixed config digests unless forced") {
    TempDir dir;
    GradientVector g = sample_grad(41, 24);
    write_gradient_file(dir.file("a.pgrd"), g, FileStamp{1, 111});
    write_gradient_file(dir.file("b.pgrd"), g, FileStamp{1, 222});
    CHECK_THROWS_AS(run_eval({dir.file("a.pgrd")}, {dir.file("b.pgrd")}, "", false), Error);
    run_eval({dir.file("a.pgrd")}, {dir.file("b.pgrd")}, dir.file("m.csv"), true); // --force
    CHECK(read_metrics_csv(dir.file("m.csv")).size() == 1);
}

TEST_CASE("cli exit codes: invalid config 2, missing artifact 3") {
    TempDir dir;
    atomic_write_bytes(dir.file("bad.json"), R"({"model":{"input":[4],"classes":0,"layers":[]}})");
    std::string bin = PGLA_BIN;
    int rc_bad = std::system((bin + " simulate --config " + dir.file("bad.json") + " 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc_bad) == 2);
    int rc_missing = std::system((bin + " simulate --config " + dir.file("absent.json") + " 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc_missing) == 3);
    // harvest before simulate: missing artifact dependency
    atomic_write_bytes(dir.file("ok.json"), std::string(R"({"out": ")") + dir.file("out") + R"(",
      "model": {"input": [16], "classes": 3,
        "layers": [{"kind":"dense","out":5},{"kind":"activation","fn":"sigmoid"},{"kind":"dense","out":3}]},
      "dataset": {"source":"synthetic","count":8,"image_side":4,"channels":1,"classes":3}})");
    int rc_dep = std::system((bin + " harvest --config " + dir.file("ok.json") + " 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc_dep) == 3);
}

TEST_CASE("eval golden fixture: frozen cosine reproduced to 1e-9") {
    std::string fixture_dir = std::string(PGLA_SOURCE_DIR) + "/tests/fixtures";
    auto rec = read_gradient_file(fixture_dir + "/golden_recovered.pgrd");
    auto cln = read_gradient_file(fixture_dir + "/golden_clean.pgrd");

    std::ifstream in(fixture_dir + "/golden_expected.txt");
    REQUIRE(in.good());
    double expected;
    in >> expected;

    double got = cosine_similarity(rec.gradient.values, cln.gradient.values).value;
    CHECK(std::fabs(got - expected) < 1e-9);
}

TEST_CASE("selftest suite passes") { CHECK(run_selftest() == 0); }
