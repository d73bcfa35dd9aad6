#pragma once

#include <string>

#include "pgla/diffusion.hpp"
#include "pgla/model.hpp"
#include "pgla/perturb.hpp"

namespace pgla {

struct DatasetConfig {
    std::string source = "synthetic"; // or "idx"
    uint32_t count = 64;
    uint32_t image_side = 16;
    uint32_t channels = 1;
    uint32_t classes = 10;
    std::string idx_images;
    std::string idx_labels;
};

struct HarvestConfig {
    uint32_t probes = 2000;
};

struct AttackConfig {
    uint32_t iterations = 300;
    double step = 0.1;
    uint32_t restarts = 3;
    std::string entry = "known-sigma"; // known-sigma | known-m | blind-c
    double m_value = 0.0;              // for entry = known-m
    double c_override = 0.5;           // for entry = blind-c
    uint32_t trials = 4;
    bool run_inversion = true;
    uint32_t local_batch = 1; // samples per client gradient
};

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct GradShapeConfig {
    bool strict_side = true; // g^2 > L as stated; false relaxes to g^2 >= L
};

/// Parsed, validated experiment configuration. The digest is a 64-bit FNV-1a
/// hash of the canonical (defaulted, key-sorted) JSON and is stamped into
/// every artifact the run emits.
struct ExperimentConfig {
    uint64_t seed = 1;
    std::string out_dir = "out";
    ModelSpec model;
    DatasetConfig dataset;
    PerturbationSpec perturbation;
    FlTopology topology;
    ScheduleConfig schedule;
    GradShapeConfig gradshape;
    TrainConfig train;
    std::string condition_source = "perturbed-surrogate"; // or "shared"
    HarvestConfig harvest;
    AttackConfig attack;

    uint64_t digest = 0;
    std::string digest_hex;
    std::string canonical_json;

    NoiseSchedule make_noise_schedule() const { return make_schedule(schedule.T, schedule.beta_start, schedule.beta_end); }
};

ExperimentConfig load_config_file(const std::string& path);
ExperimentConfig parse_config_json(const std::string& json_text);

/// Desk-scale defaults as a JSON document (also what `pgla selftest --dump-config` prints).
std::string default_config_json();

uint64_t fnv1a64(const std::string& bytes);

} // namespace pgla
