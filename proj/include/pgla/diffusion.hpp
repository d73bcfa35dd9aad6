#pragma once

#include <functional>
#include <optional>

#include "pgla/gradshape.hpp"
#include "pgla/graph.hpp"
#include "pgla/layout.hpp"
#include "pgla/rng.hpp"

namespace pgla {

/// Markovian forward-process schedule. gamma[t] is the running product of
/// alpha up to t, computed in double; gamma[0] = 1.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0, beta_end = 0.0;
    std::vector<double> beta;  // index 1..T
    std::vector<double> alpha; // 1 - beta
    std::vector<double> gamma; // index 0..T, strictly decreasing

    void require_step(int t) const {
        if (t < 1 || t > T) throw Error(ErrorKind::Parameter, "schedule: step out of range");
    }
};

/// Linear beta interpolation between beta_start and beta_end.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// sqrt(gamma_t) X0 + sqrt(1 - gamma_t) eps.
FlatTensor q_sample(const FlatTensor& x0, int t, const FlatTensor& eps, const NoiseSchedule& sched);

struct PosteriorCoeffs {
    double coef_x0 = 0.0;
    double coef_xt = 0.0;
    double sigma_sq = 0.0;
};

/// Coefficients of q(X_{t-1} | X0, X_t). The default uses sqrt(alpha) on the
/// X_t term (the form Gaussian conditioning yields); as_printed keeps the
/// plain alpha variant.
PosteriorCoeffs posterior_coeffs(double alpha_t, double gamma_prev, double gamma_t, bool as_printed = false);

struct PosteriorParams {
    FlatTensor mu;
    double sigma_sq = 0.0; // zero iff t == 1
};

PosteriorParams posterior_params(const FlatTensor& x0, const FlatTensor& xt, int t, const NoiseSchedule& sched,
                                 bool as_printed = false);

struct TprimeBracket {
    int t_lo = 0;
    int t_hi = 0;
    int t_prime = 0;
};

/// Smallest t with gamma_t <= 1/(1+M^2), clamped to [0, T]. For interior
/// points gamma_{t_lo} > 1/(1+M^2) >= gamma_{t_hi}.
TprimeBracket map_M_to_Tprime(double M, const NoiseSchedule& sched);

/// Entry into the reverse chain. Exactly one of M / c_override must be set.
struct DenoiseRequest {
    std::optional<double> M;          // known noise scale in normalized units
    std::optional<double> c_override; // blind scaling in (0,1) when M is unknown
    bool strict_side = true;          // grid rule g^2 > L (false relaxes to >=)
};

struct EntryPoint {
    FlatTensor x_start;
    int t_prime = 0;
    double c = 1.0;
};

/// Known M: X = grid / sqrt(1+M^2), T' from map_M_to_Tprime. Unknown M:
/// X = c grid with T' solving gamma_{T'} <= c^2.
EntryPoint entry_point(const AdjustedGrid& input, const DenoiseRequest& req, const NoiseSchedule& sched);

/// Time-conditioned residual MLP over the flattened grid. Conditional mode
/// doubles the input rows (grid stacked on the condition grid).
struct PredictorSpec {
    uint32_t grid_side = 0;
    bool conditional = false;
    uint32_t hidden = 64;
    uint32_t blocks = 2;
    uint32_t time_dim = 64;

    uint32_t grid_area() const { return grid_side * grid_side; }
    uint32_t input_rows() const { return conditional ? 2 * grid_area() : grid_area(); }
    LayerLayout build_layout() const;
};

struct NoisePredictor {
    PredictorSpec spec;
    FlatTensor params;
    LayerLayout layout;
    NoiseSchedule schedule; // schedule the predictor was trained against
};

struct TrainConfig {
    uint32_t steps = 20000;
    uint32_t batch = 32;
    double lr = 1e-3;
    uint32_t hidden = 64;
    uint32_t blocks = 2;
    uint32_t time_dim = 64;
    bool conditional = false;
    double val_fraction = 0.1;
    uint32_t log_every = 500;
    bool weighted_loss = false; // variance-weighted objective as an optional mode
};

struct TrainResult {
    NoisePredictor predictor;
    std::vector<float> loss_trace; // sampled every log_every steps
    double val_loss = 0.0;         // held-out noise-prediction loss (NaN if no val split)
};

/// Trains the noise predictor on adjusted grids with t ~ U(1..T) and
/// eps ~ N(0, I) per sample; unweighted squared noise-prediction error,
/// adaptive-moment updates. conditions must align 1:1 when conditional.
TrainResult train(const std::vector<AdjustedGrid>& dataset, const std::vector<AdjustedGrid>* conditions,
                  const TrainConfig& cfg, const NoiseSchedule& sched, RngState rng);

/// Squared noise-prediction error for one grid under a fixed corruption
/// (t, eps), averaged per element. Pure in all arguments.
double noise_prediction_loss(const NoisePredictor& f, const AdjustedGrid& x0, const AdjustedGrid* condition, int t,
                             const FlatTensor& eps);

/// Ancestral reverse sampling from step t_prime down to 1; the injected noise
/// term is zeroed on the final step. Runs exactly t_prime predictor calls.
FlatTensor sample_reverse(const FlatTensor& x_start, int t_prime, const NoisePredictor& f, RngState& rng,
                          const FlatTensor* condition = nullptr);

/// Same loop against a raw predictor function (test seam / oracles).
FlatTensor sample_reverse_fn(const FlatTensor& x_start, int t_prime, const NoiseSchedule& sched,
                             const std::function<FlatTensor(const FlatTensor&, int)>& predict, RngState& rng);

struct DenoiseOutcome {
    GradientVector recovered;
    double M = 0.0;       // normalized noise scale used (NaN when blind)
    double c = 1.0;
    int t_prime = 0;
    double scale = 1.0;   // normalization scale applied to the grid
};

/// Full chain: adjust -> entry_point -> sample_reverse -> restore. When the
/// predictor is conditional the adjusted input grid doubles as the condition.
/// scale_override lets the caller normalize by an estimate of the clean
/// gradient scale instead of the perturbed one.
DenoiseOutcome denoise(const GradientVector& perturbed, const NoisePredictor& f, const DenoiseRequest& req,
                       RngState& rng, std::optional<double> scale_override = std::nullopt);

} // namespace pgla
