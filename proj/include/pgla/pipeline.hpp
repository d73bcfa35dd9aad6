#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pgla/attack.hpp"
#include "pgla/config.hpp"
#include "pgla/io.hpp"
#include "pgla/perturb.hpp"

namespace pgla {

/// Seeded synthetic dataset: uniform pixels in [0,1], uniform labels.
ProbeDataset make_synthetic_dataset(uint32_t count, uint32_t side, uint32_t channels, uint32_t classes,
                                    RngState rng);

/// Dataset per config (synthetic generator or IDX files).
ProbeDataset load_dataset(const ExperimentConfig& cfg, RngState rng);

struct OutPaths {
    std::string dir;

    std::string shared(uint32_t trial, size_t client) const;
    std::string clean(uint32_t trial, size_t client) const;
    std::string recovered(uint32_t trial) const;
    std::string harvest() const { return dir + "/harvest.pgrs"; }
    std::string checkpoint() const { return dir + "/predictor.pgdm"; }
    std::string metrics() const { return dir + "/metrics.csv"; }
    std::string config_copy() const { return dir + "/config.json"; }
};

/// Worker cap from PGLA_THREADS (default 1).
unsigned thread_budget();

/// Runs fn(0..n-1); work items must be independent and write only their slot.
void parallel_for_indexed(uint32_t n, const std::function<void(uint32_t)>& fn);

// Subcommand bodies; all throw pgla::Error on failure.
void run_simulate(const ExperimentConfig& cfg);
void run_harvest(const ExperimentConfig& cfg);
void run_train_diffusion(const ExperimentConfig& cfg);
void run_denoise(const ExperimentConfig& cfg);
void run_invert(const ExperimentConfig& cfg, const std::string& gradient_path);
void run_pipeline(const ExperimentConfig& cfg);
void run_eval(const std::vector<std::string>& recovered_paths, const std::vector<std::string>& clean_paths,
              const std::string& csv_out, bool force);

/// Compiled-in oracle suite; prints one line per check.
int run_selftest();

} // namespace pgla
