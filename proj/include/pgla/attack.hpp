#pragma once

#include <optional>
#include <span>

#include "pgla/diffusion.hpp"
#include "pgla/metrics.hpp"
#include "pgla/model.hpp"

namespace pgla {

/// Validates and returns the transport layout of an intercepted gradient
/// (shapes are visible on the wire in FL).
LayerLayout infer_structure(const GradientVector& shared);

struct SurrogateOptions {
    Activation activation = Activation::Sigmoid;     // attacker's guess between layers
    std::vector<uint32_t> input_shape_hint;          // required when the first layer is conv
    // probes per surrogate initialization; 1 draws a fresh W^s per probe so the
    // harvest covers the weight family rather than one draw, 0 never re-inits
    uint32_t reinit_every = 1;
};

/// Reconstructs a model spec whose parameter layout matches the wire layout.
ModelSpec derive_model_spec(const LayerLayout& layout, const SurrogateOptions& opts = {});

struct SurrogateHarvest {
    ModelInstance surrogate;
    std::vector<GradientVector> gradients; // role = surrogate, one per probe sample
    ProbeSource probe_source = ProbeSource::Synthetic;
};

/// Builds a freshly initialized surrogate for the layout and harvests one
/// gradient per probe sample.
SurrogateHarvest harvest_surrogate_gradients(const LayerLayout& layout, const ProbeDataset& probe, RngState rng,
                                             const SurrogateOptions& opts = {});

/// How the attacker resolves the diffusion entry point.
struct PglaMode {
    std::optional<double> known_sigma; // noise scale in gradient units; M derived from it
    std::optional<double> M;           // noise scale already in normalized units
    std::optional<double> c_override;  // blind entry in (0,1)
    bool strict_side = true;           // grid rule used by adjustment
};

struct PglaProvenance {
    double M = 0.0;
    double c = 1.0;
    int t_prime = 0;
    double scale = 1.0; // normalization scale used by gradient adjustment
};

struct PglaResult {
    GradientVector recovered;
    PglaProvenance provenance;
};

/// Denoises an intercepted gradient. With known_sigma the clean-gradient scale
/// is estimated by deflating the perturbed std: s^2 ~= std(shared)^2 - sigma^2.
PglaResult run_pgla(const GradientVector& shared, const NoisePredictor& predictor, const PglaMode& mode,
                    RngState& rng);

struct InversionConfig {
    uint32_t iterations = 300;
    double step = 0.1;
    uint32_t restarts = 3; // step halved on divergence
};

struct InversionResult {
    FlatTensor x_best;
    FlatTensor y_soft;          // recovered label distribution
    int y_best = 0;             // argmax of y_soft
    double best_loss = 0.0;
    std::vector<double> trace;  // best-so-far match loss per iteration
    uint32_t restarts_used = 0;
    bool failed = false;        // diverged even after all restarts
};

/// Joint descent on (dummy image, soft label) minimizing the gradient-match
/// loss against a single-sample target gradient.
InversionResult invert_gradients(const GradientVector& target, const ModelInstance& model,
                                 const InversionConfig& cfg, RngState rng, const FlatTensor* x_init = nullptr,
                                 const FlatTensor* y_logits_init = nullptr);

/// Per-run metrics; fields are set iff the matching ground truth was given.
struct AttackReport {
    std::optional<double> cos_g;
    std::optional<double> psnr_g;
    std::optional<double> psnr_i;
    std::optional<double> lra;
    uint64_t seed = 0;
    std::string config_digest;
    double wall_ms = 0.0; // never serialized into metrics CSV
};

AttackReport evaluate(const GradientVector* recovered, const GradientVector* clean, const FlatTensor* x_rec,
                      const FlatTensor* x_true, std::optional<int> y_rec, std::optional<int> y_true);

} // namespace pgla
