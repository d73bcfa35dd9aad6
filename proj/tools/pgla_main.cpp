#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pgla/pipeline.hpp"

namespace {

int exit_code_for(const pgla::Error& e) {
    switch (e.kind()) {
        case pgla::ErrorKind::Config: return 2;
        case pgla::ErrorKind::MissingArtifact: return 3;
        default: return 1;
    }
}

void print_error_record(const pgla::Error& e) {
    // machine-readable error record on stderr
    std::fprintf(stderr, "{\"error\":\"%s\",\"message\":\"%s\"}\n", pgla::error_kind_name(e.kind()), e.what());
}

struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    uint32_t trials = 0;
};

pgla::ExperimentConfig resolve_config(const CommonOpts& opts) {
    pgla::ExperimentConfig cfg =
        opts.config_path.empty() ? pgla::parse_config_json(pgla::default_config_json())
                                 : pgla::load_config_file(opts.config_path);
    // flag overrides re-canonicalize so the digest tracks the effective config
    bool touched = false;
    if (opts.seed_set) {
        cfg.seed = opts.seed;
        touched = true;
    }
    if (!opts.out.empty()) {
        cfg.out_dir = opts.out;
        touched = true;
    }
    if (opts.trials > 0) {
        cfg.attack.trials = opts.trials;
        touched = true;
    }
    if (touched) {
        nlohmann::json j = nlohmann::json::parse(cfg.canonical_json);
        j["seed"] = cfg.seed;
        j["out"] = cfg.out_dir;
        j["attack"]["trials"] = cfg.attack.trials;
        cfg = pgla::parse_config_json(j.dump());
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning gradient perturbation testbed: diffusion denoising and inversion attacks"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "JSON experiment config");
        cmd->add_option("--seed", opts.seed, "override config seed")->each([&](const std::string&) {
            opts.seed_set = true;
        });
        cmd->add_option("--out", opts.out, "override output directory");
    };

    auto* c_sim = app.add_subcommand("simulate", "run one FL round and write shared/clean gradients");
    add_common(c_sim);
    auto* c_harv = app.add_subcommand("harvest", "build surrogate and harvest training gradients");
    add_common(c_harv);
    auto* c_train = app.add_subcommand("train-diffusion", "train the gradient denoiser");
    add_common(c_train);
    auto* c_den = app.add_subcommand("denoise", "denoise the intercepted gradient");
    add_common(c_den);

    std::string invert_target;
    auto* c_inv = app.add_subcommand("invert", "run gradient inversion against a gradient file");
    add_common(c_inv);
    c_inv->add_option("--gradient", invert_target, "gradient file to invert")->required();

    auto* c_pipe = app.add_subcommand("pipeline", "simulate + harvest + train + denoise + invert + eval");
    add_common(c_pipe);
    c_pipe->add_option("--trials", opts.trials, "attack trials to run");

    std::vector<std::string> eval_recovered, eval_clean;
    std::string eval_csv;
    bool eval_force = false;
    auto* c_eval = app.add_subcommand("eval", "compare recovered gradients against clean ones");
    c_eval->add_option("--recovered", eval_recovered, "recovered gradient files")->required();
    c_eval->add_option("--clean", eval_clean, "clean gradient files")->required();
    c_eval->add_option("--csv", eval_csv, "metrics CSV to write");
    c_eval->add_flag("--force", eval_force, "allow mixed config digests");

    bool dump_config = false;
    auto* c_self = app.add_subcommand("selftest", "run the built-in oracle checks");
    c_self->add_flag("--dump-config", dump_config, "print the default config and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_self->parsed()) {
            if (dump_config) {
                std::fputs(pgla::default_config_json().c_str(), stdout);
                return 0;
            }
            return pgla::run_selftest();
        }
        if (c_eval->parsed()) {
            pgla::run_eval(eval_recovered, eval_clean, eval_csv, eval_force);
            return 0;
        }
        pgla::ExperimentConfig cfg = resolve_config(opts);
        if (c_sim->parsed()) pgla::run_simulate(cfg);
        else if (c_harv->parsed()) pgla::run_harvest(cfg);
        else if (c_train->parsed()) pgla::run_train_diffusion(cfg);
        else if (c_den->parsed()) pgla::run_denoise(cfg);
        else if (c_inv->parsed()) pgla::run_invert(cfg, invert_target);
        else if (c_pipe->parsed()) pgla::run_pipeline(cfg);
        return 0;
    } catch (const pgla::Error& e) {
        print_error_record(e);
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "{\"error\":\"internal\",\"message\":\"%s\"}\n", e.what());
        return 1;
    }
}
