#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "pgla/layout.hpp"
#include "pgla/model.hpp"
#include "pgla/rng.hpp"

namespace pgla {

enum class Mechanism { GaussianDp, LaplaceDp, PerLayerRandom };

/// Perturbation parameters and the noise scale they resolve to.
/// For the DP mechanisms sigma is always derived from (epsilon, delta, clip,
/// min_local_size); only PerLayerRandom accepts a hand-set sigma.
struct PerturbationSpec {
    Mechanism mechanism = Mechanism::GaussianDp;
    double epsilon = 1.0;
    double delta = 1e-5;
    double clip = 1.0;             // C
    uint64_t min_local_size = 1;   // m
    double sigma = 0.0;            // resolved noise scale (Laplace: the scale b)
    double noise_scale_m = 0.0;    // sigma in normalized grid units, set by the attack side

    static PerturbationSpec gaussian(double eps, double delta, double clip, uint64_t m);
    static PerturbationSpec laplace(double eps, double clip, uint64_t m);
    static PerturbationSpec raw(Mechanism mech, double sigma);
};

struct FlTopology {
    uint64_t clients = 1;      // N
    uint64_t t_dps = 1;        // aggregation times
    uint64_t l_dpc = 1;        // exposures of uploaded parameters
    bool server_noise = false;
};

struct PrivacyAccountant {
    std::vector<std::pair<double, double>> entries; // (epsilon_i, delta_i)

    void add(double eps, double delta) { entries.emplace_back(eps, delta); }
};

/// Simple composition: budgets add linearly.
std::pair<double, double> compose(const PrivacyAccountant& acct);

/// sigma for local client perturbation; sensitivity is 2C/m.
/// Laplace: sens / eps. Gaussian: sens * sqrt(2 ln(1.25/delta)) / eps.
double client_sigma(const PerturbationSpec& spec);

/// NbAFL server-side sigma: 0 when t_dps <= l_dpc sqrt(N), else
/// c_dp * (2C/m) * sqrt(t_dps^2 - l_dpc^2 N) / (N eps).
double server_sigma(const FlTopology& topo, double clip, uint64_t m, double epsilon, double c_dp);

/// g * min(1, C / ||g||): norm bounded by C, direction preserved.
GradientVector clip_gradient(const GradientVector& g, double clip);

/// Adds i.i.d. noise of the spec's resolved scale to every coordinate.
GradientVector perturb(const GradientVector& g, const PerturbationSpec& spec, RngState& rng);

struct RealizedLayerNoise {
    Mechanism mechanism;
    double sigma;
};

struct PerLayerResult {
    GradientVector gradient;
    std::vector<RealizedLayerNoise> realized;
};

/// Each layer slice perturbed independently with its own mechanism and scale.
PerLayerResult perturb_per_layer(const GradientVector& g, const std::vector<PerturbationSpec>& specs, RngState& rng);

struct ClientSim {
    ModelInstance model;
    std::vector<ProbeSample> data;
};

struct RoundResult {
    std::vector<GradientVector> shared; // perturbed, visible to the attacker
    std::vector<GradientVector> clean;  // post-clip ground truth, evaluation only
    std::optional<GradientVector> aggregate; // server-noised mean, when enabled
};

/// One FL round: per client, gradient (mean over its local batch), clip,
/// perturb, emit. Clean post-clip gradients are returned for evaluation only.
RoundResult simulate_round(const std::vector<ClientSim>& clients, const PerturbationSpec& spec,
                           const FlTopology& topo, uint64_t round, RngState& rng, PrivacyAccountant& acct,
                           double server_c_dp = 0.0);

} // namespace pgla
