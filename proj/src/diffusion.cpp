#include "pgla/diffusion.hpp"

#include <cmath>
#include <limits>

namespace pgla {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw Error(ErrorKind::Parameter, "make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw Error(ErrorKind::Parameter, "make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(T) + 1, 0.0);
    s.gamma.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        s.beta[t] = beta_start + frac * (beta_end - beta_start);
        s.alpha[t] = 1.0 - s.beta[t];
        s.gamma[t] = s.gamma[t - 1] * s.alpha[t];
    }
    return s;
}

FlatTensor q_sample(const FlatTensor& x0, int t, const FlatTensor& eps, const NoiseSchedule& sched) {
    sched.require_step(t);
    require_same_length(x0, eps, "q_sample");
    const double g = sched.gamma[t];
    const float a = static_cast<float>(std::sqrt(g));
    const float b = static_cast<float>(std::sqrt(1.0 - g));
    FlatTensor out = x0;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0[i] + b * eps[i];
    return out;
}

PosteriorCoeffs posterior_coeffs(double alpha_t, double gamma_prev, double gamma_t, bool as_printed) {
    if (!(alpha_t > 0.0 && alpha_t < 1.0)) throw Error(ErrorKind::Parameter, "posterior: alpha out of (0,1)");
    if (!(gamma_t > 0.0 && gamma_t < 1.0) || !(gamma_prev > 0.0 && gamma_prev <= 1.0))
        throw Error(ErrorKind::Parameter, "posterior: gamma out of range");
    const double one_m_gt = 1.0 - gamma_t;
    PosteriorCoeffs c;
    c.coef_x0 = std::sqrt(gamma_prev) * (1.0 - alpha_t) / one_m_gt;
    c.coef_xt = (as_printed ? alpha_t : std::sqrt(alpha_t)) * (1.0 - gamma_prev) / one_m_gt;
    c.sigma_sq = (1.0 - gamma_prev) * (1.0 - alpha_t) / one_m_gt;
    return c;
}

PosteriorParams posterior_params(const FlatTensor& x0, const FlatTensor& xt, int t, const NoiseSchedule& sched,
                                 bool as_printed) {
    sched.require_step(t);
    require_same_length(x0, xt, "posterior_params");
    PosteriorParams out;
    if (t == 1) {
        // gamma_0 = 1: the chain endpoint is deterministic
        out.mu = x0;
        out.sigma_sq = 0.0;
        return out;
    }
    PosteriorCoeffs c = posterior_coeffs(sched.alpha[t], sched.gamma[t - 1], sched.gamma[t], as_printed);
    out.mu = x0;
    for (size_t i = 0; i < x0.size(); ++i)
        out.mu.data[i] = static_cast<float>(c.coef_x0 * x0[i] + c.coef_xt * xt[i]);
    out.sigma_sq = c.sigma_sq;
    return out;
}

namespace {

int first_step_with_gamma_below(double target, const NoiseSchedule& sched) {
    // gamma strictly decreases; gamma[0] = 1
    if (target >= 1.0) return 0;
    int lo = 0, hi = sched.T;
    if (sched.gamma[sched.T] > target) return sched.T; // clamp
    while (lo < hi) {
        int mid = (lo + hi) / 2;
        if (sched.gamma[mid] <= target)
            hi = mid;
        else
            lo = mid + 1;
    }
    return lo;
}

} // namespace

TprimeBracket map_M_to_Tprime(double M, const NoiseSchedule& sched) {
    if (M < 0.0) throw Error(ErrorKind::Parameter, "map_M_to_Tprime: negative M");
    const double target = 1.0 / (1.0 + M * M);
    TprimeBracket b;
    b.t_prime = first_step_with_gamma_below(target, sched);
    b.t_lo = std::max(b.t_prime - 1, 0);
    b.t_hi = b.t_prime;
    return b;
}

EntryPoint entry_point(const AdjustedGrid& input, const DenoiseRequest& req, const NoiseSchedule& sched) {
    if (req.M.has_value() == req.c_override.has_value())
        throw Error(ErrorKind::Usage, "entry_point: exactly one of M / c_override must be set");
    EntryPoint out;
    if (req.M) {
        if (*req.M < 0.0) throw Error(ErrorKind::Parameter, "entry_point: negative M");
        out.c = 1.0 / std::sqrt(1.0 + *req.M * *req.M);
        out.t_prime = map_M_to_Tprime(*req.M, sched).t_prime;
    } else {
        const double c = *req.c_override;
        if (!(c > 0.0 && c < 1.0)) throw Error(ErrorKind::Parameter, "entry_point: c must lie in (0,1)");
        out.c = c;
        out.t_prime = first_step_with_gamma_below(c * c, sched);
    }
    out.x_start = input.grid;
    const float cf = static_cast<float>(out.c);
    for (auto& v : out.x_start.data) v *= cf;
    return out;
}

// ---------------------------------------------------------------------------
// Noise predictor
// ---------------------------------------------------------------------------

LayerLayout PredictorSpec::build_layout() const {
    if (grid_side < 1) throw Error(ErrorKind::Spec, "predictor: grid side must be >= 1");
    if (hidden < 1 || blocks < 1) throw Error(ErrorKind::Spec, "predictor: hidden/blocks must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0) throw Error(ErrorKind::Spec, "predictor: time_dim must be even and >= 2");
    LayerLayout l;
    l.push("in.weight", {hidden, input_rows()});
    l.push("in.bias", {hidden});
    l.push("time.weight", {hidden, time_dim});
    for (uint32_t b = 0; b < blocks; ++b) {
        std::string base = "block" + std::to_string(b);
        l.push(base + ".w1", {hidden, hidden});
        l.push(base + ".b1", {hidden});
        l.push(base + ".w2", {hidden, hidden});
        l.push(base + ".b2", {hidden});
    }
    // time-gated input skip: the optimal noise estimate carries an identity
    // term a(t) X_t that a low-rank projection cannot express
    l.push("skip.weight", {1, time_dim});
    l.push("out.weight", {grid_area(), hidden});
    l.push("out.bias", {grid_area()});
    l.validate();
    return l;
}

namespace {

constexpr uint64_t kTagInit = 0x696e6974;   // parameter init stream
constexpr uint64_t kTagSplit = 0x73706c69;  // train/val shuffle
constexpr uint64_t kTagStep = 0x73746570;   // per-step batch sampling
constexpr uint64_t kTagVal = 0x76616c;      // held-out corruption draws

Mat<float> time_embedding(const std::vector<int>& ts, uint32_t dim) {
    const uint32_t half = dim / 2;
    Mat<float> emb(static_cast<int>(dim), static_cast<int>(ts.size()));
    for (size_t j = 0; j < ts.size(); ++j) {
        for (uint32_t i = 0; i < half; ++i) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            double a = ts[j] * freq;
            emb.at(static_cast<int>(2 * i), static_cast<int>(j)) = static_cast<float>(std::sin(a));
            emb.at(static_cast<int>(2 * i + 1), static_cast<int>(j)) = static_cast<float>(std::cos(a));
        }
    }
    return emb;
}

/// Parameter leaves registered on a float graph, in layout order.
struct PredictorLeaves {
    std::vector<GraphF::Index> ids;

    static PredictorLeaves make(GraphF& g, const PredictorSpec& spec, const LayerLayout& layout,
                                const FlatTensor& params) {
        PredictorLeaves out;
        for (const auto& e : layout.entries) {
            int rows = static_cast<int>(e.shape[0]);
            int cols = e.shape.size() > 1 ? static_cast<int>(e.shape[1]) : 1;
            Mat<float> m(rows, cols);
            for (uint64_t i = 0; i < e.length; ++i) m.d[i] = params[e.offset + i];
            out.ids.push_back(g.leaf(std::move(m)));
        }
        (void)spec;
        return out;
    }
};

GraphF::Index predictor_forward(GraphF& g, const PredictorSpec& spec, const PredictorLeaves& leaves,
                                GraphF::Index x, const std::vector<int>& ts) {
    const int G = static_cast<int>(spec.grid_area());
    size_t li = 0;
    auto next = [&]() { return leaves.ids[li++]; };
    auto w_in = next(), b_in = next(), w_time = next();
    auto emb = g.constant(time_embedding(ts, spec.time_dim));
    auto h = g.add_col(g.add(g.matmul(w_in, x), g.matmul(w_time, emb)), b_in);
    for (uint32_t b = 0; b < spec.blocks; ++b) {
        auto w1 = next(), b1 = next(), w2 = next(), b2 = next();
        auto u = g.tanh_(h);
        u = g.add_col(g.matmul(w1, u), b1);
        u = g.tanh_(u);
        u = g.add_col(g.matmul(w2, u), b2);
        h = g.add(h, u);
    }
    auto w_skip = next(), w_out = next(), b_out = next();
    auto gate = g.matmul(w_skip, emb); // 1 x B, one scalar gate per column's t
    auto grid_rows = spec.conditional ? g.slice_rows(x, 0, G) : x;
    auto skip = g.mul(g.tile_rows(gate, G), grid_rows);
    return g.add(g.add_col(g.matmul(w_out, g.tanh_(h)), b_out), skip);
}

FlatTensor init_predictor_params(const PredictorSpec& spec, const LayerLayout& layout, RngState rng) {
    std::vector<float> params(layout.total(), 0.0f);
    for (const auto& e : layout.entries) {
        bool is_weight = e.shape.size() == 2;
        if (!is_weight) continue;                  // biases zero
        // zero-init output paths: the net starts as the constant-zero predictor
        if (e.name == "out.weight" || e.name == "skip.weight") continue;
        double fan_in = e.shape[1], fan_out = e.shape[0];
        double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (uint64_t i = 0; i < e.length; ++i)
            params[e.offset + i] = static_cast<float>(a * (2.0 * rng.next_unit_open() - 1.0));
    }
    return FlatTensor::vector_of(std::move(params));
}

struct AdamState {
    std::vector<std::vector<float>> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    uint64_t t = 0;

    explicit AdamState(const LayerLayout& layout) {
        for (const auto& e : layout.entries) {
            m.emplace_back(e.length, 0.0f);
            v.emplace_back(e.length, 0.0f);
        }
    }

    void update(std::vector<float>& theta, size_t entry, const float* grad, size_t n, double lr) {
        auto& mi = m[entry];
        auto& vi = v[entry];
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < n; ++i) {
            const double gi = grad[i];
            mi[i] = static_cast<float>(beta1 * mi[i] + (1.0 - beta1) * gi);
            vi[i] = static_cast<float>(beta2 * vi[i] + (1.0 - beta2) * gi * gi);
            const double mh = mi[i] / c1;
            const double vh = vi[i] / c2;
            theta[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
        }
    }
};

double variance_weight(const NoiseSchedule& sched, int t) {
    // posterior variance vanishes at t=1; reuse the t=2 weight there
    int tt = std::max(t, 2);
    PosteriorCoeffs c = posterior_coeffs(sched.alpha[tt], sched.gamma[tt - 1], sched.gamma[tt]);
    double b = 1.0 - sched.alpha[tt];
    return b * b / (2.0 * c.sigma_sq * sched.alpha[tt] * (1.0 - sched.gamma[tt]));
}

} // namespace

TrainResult train(const std::vector<AdjustedGrid>& dataset, const std::vector<AdjustedGrid>* conditions,
                  const TrainConfig& cfg, const NoiseSchedule& sched, RngState rng) {
    if (dataset.empty()) throw Error(ErrorKind::Input, "train: empty dataset");
    if (cfg.conditional) {
        if (!conditions || conditions->size() != dataset.size())
            throw Error(ErrorKind::Input, "train: conditional mode needs one condition per grid");
    }
    const uint32_t side = dataset.front().side();
    for (const auto& d : dataset)
        if (d.side() != side) throw Error(ErrorKind::Input, "train: mixed grid sizes");
    const int G = static_cast<int>(side) * static_cast<int>(side);

    PredictorSpec spec;
    spec.grid_side = side;
    spec.conditional = cfg.conditional;
    spec.hidden = cfg.hidden;
    spec.blocks = cfg.blocks;
    spec.time_dim = cfg.time_dim;
    LayerLayout layout = spec.build_layout();
    FlatTensor params = init_predictor_params(spec, layout, rng.derive(kTagInit));

    // train/val split
    const size_t n = dataset.size();
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
    RngState shuffle_rng = rng.derive(kTagSplit);
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);
    size_t n_val = cfg.val_fraction > 0.0 && n >= 4
                       ? std::max<size_t>(1, static_cast<size_t>(cfg.val_fraction * static_cast<double>(n)))
                       : 0;
    std::vector<uint32_t> train_idx(order.begin(), order.end() - static_cast<long>(n_val));
    std::vector<uint32_t> val_idx(order.end() - static_cast<long>(n_val), order.end());

    GraphF g;
    PredictorLeaves leaves = PredictorLeaves::make(g, spec, layout, params);
    GraphF::Index checkpoint = g.size();
    AdamState adam(layout);

    const int B = static_cast<int>(cfg.batch);
    const int in_rows = static_cast<int>(spec.input_rows());
    Mat<float> xin(in_rows, B);
    Mat<float> target(G, B);
    std::vector<int> ts(static_cast<size_t>(B));

    TrainResult result;
    std::array<float, 1> dummy{};
    (void)dummy;

    auto run_batch = [&](const Mat<float>& x, const Mat<float>& eps_target, const std::vector<int>& steps,
                         bool update) -> double {
        auto xnode = g.constant(x);
        auto pred = predictor_forward(g, spec, leaves, xnode, steps);
        auto diff = g.sub(pred, g.constant(eps_target));
        GraphF::Index sq = g.mul(diff, diff);
        if (cfg.weighted_loss) {
            Mat<float> w(1, static_cast<int>(steps.size()));
            for (size_t j = 0; j < steps.size(); ++j)
                w.d[j] = static_cast<float>(variance_weight(sched, steps[j]));
            sq = g.mul(sq, g.tile_rows(g.constant(std::move(w)), G));
        }
        auto loss = g.scale(g.sum_all(sq), 1.0f / static_cast<float>(static_cast<size_t>(G) * steps.size()));
        double lv = g.value(loss).d[0];
        if (update) {
            auto grads = g.backward(loss, leaves.ids);
            // global-norm gradient clipping keeps late training stable
            double norm_sq = 0.0;
            for (size_t e = 0; e < leaves.ids.size(); ++e)
                for (float v : g.value(grads[e]).d) norm_sq += static_cast<double>(v) * v;
            const double clip_norm = 1.0;
            const float gscale = norm_sq > clip_norm * clip_norm
                                     ? static_cast<float>(clip_norm / std::sqrt(norm_sq))
                                     : 1.0f;
            adam.t += 1;
            std::vector<float> scaled;
            for (size_t e = 0; e < leaves.ids.size(); ++e) {
                const auto& gv = g.value(grads[e]);
                const auto& entry = layout.entries[e];
                scaled.assign(gv.d.begin(), gv.d.end());
                if (gscale != 1.0f)
                    for (auto& v : scaled) v *= gscale;
                // parameter update goes through the flat tensor, then back into the leaf
                std::vector<float> theta(params.data.begin() + static_cast<long>(entry.offset),
                                         params.data.begin() + static_cast<long>(entry.offset + entry.length));
                adam.update(theta, e, scaled.data(), theta.size(), cfg.lr);
                std::copy(theta.begin(), theta.end(), params.data.begin() + static_cast<long>(entry.offset));
                Mat<float>& lv2 = g.leaf_value(leaves.ids[e]);
                std::copy(theta.begin(), theta.end(), lv2.d.begin());
            }
        }
        g.truncate(checkpoint);
        return lv;
    };

    auto fill_column = [&](Mat<float>& x, Mat<float>& eps_tgt, int col, const AdjustedGrid& item,
                           const AdjustedGrid* cond, int t, RngState& noise_rng) {
        const double gam = sched.gamma[t];
        const float a = static_cast<float>(std::sqrt(gam));
        const float b = static_cast<float>(std::sqrt(1.0 - gam));
        for (int r = 0; r < G; ++r) {
            float e = static_cast<float>(noise_rng.next_gaussian());
            eps_tgt.at(r, col) = e;
            x.at(r, col) = a * item.grid[static_cast<size_t>(r)] + b * e;
        }
        if (spec.conditional)
            for (int r = 0; r < G; ++r) x.at(G + r, col) = cond->grid[static_cast<size_t>(r)];
    };

    for (uint32_t step = 1; step <= cfg.steps; ++step) {
        RngState srng = rng.derive(kTagStep, step);
        for (int col = 0; col < B; ++col) {
            uint32_t idx = train_idx[srng.next_u64() % train_idx.size()];
            int t = static_cast<int>(srng.next_u64() % static_cast<uint64_t>(sched.T)) + 1;
            ts[static_cast<size_t>(col)] = t;
            fill_column(xin, target, col, dataset[idx], cfg.conditional ? &(*conditions)[idx] : nullptr, t, srng);
        }
        double lv = run_batch(xin, target, ts, true);
        if (!std::isfinite(lv)) throw Error(ErrorKind::Input, "train: loss diverged");
        if (step % cfg.log_every == 0 || step == cfg.steps) result.loss_trace.push_back(static_cast<float>(lv));
    }

    // held-out loss with fixed per-item draws, comparable across runs
    if (!val_idx.empty()) {
        Mat<float> vx(in_rows, static_cast<int>(val_idx.size()));
        Mat<float> vt(G, static_cast<int>(val_idx.size()));
        std::vector<int> vts(val_idx.size());
        for (size_t j = 0; j < val_idx.size(); ++j) {
            RngState vr = rng.derive(kTagVal, j);
            int t = static_cast<int>(vr.next_u64() % static_cast<uint64_t>(sched.T)) + 1;
            vts[j] = t;
            fill_column(vx, vt, static_cast<int>(j), dataset[val_idx[j]],
                        cfg.conditional ? &(*conditions)[val_idx[j]] : nullptr, t, vr);
        }
        result.val_loss = run_batch(vx, vt, vts, false);
    } else {
        result.val_loss = std::numeric_limits<double>::quiet_NaN();
    }

    result.predictor = NoisePredictor{spec, std::move(params), std::move(layout), sched};
    return result;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

FlatTensor sample_reverse_fn(const FlatTensor& x_start, int t_prime, const NoiseSchedule& sched,
                             const std::function<FlatTensor(const FlatTensor&, int)>& predict, RngState& rng) {
    if (t_prime < 0 || t_prime > sched.T) throw Error(ErrorKind::Parameter, "sample_reverse: T' out of range");
    FlatTensor x = x_start;
    for (int t = t_prime; t >= 1; --t) {
        FlatTensor eps = predict(x, t);
        require_same_length(x, eps, "sample_reverse predictor output");
        const double alpha = sched.alpha[t];
        const double gamma = sched.gamma[t];
        const double inv_sqrt_a = 1.0 / std::sqrt(alpha);
        const double k = (1.0 - alpha) / std::sqrt(1.0 - gamma);
        const double zscale = std::sqrt(1.0 - alpha);
        if (t > 1) {
            for (size_t i = 0; i < x.size(); ++i) {
                double z = rng.next_gaussian();
                x.data[i] = static_cast<float>(inv_sqrt_a * (x[i] - k * eps[i]) + zscale * z);
            }
        } else {
            for (size_t i = 0; i < x.size(); ++i)
                x.data[i] = static_cast<float>(inv_sqrt_a * (x[i] - k * eps[i]));
        }
    }
    return x;
}

namespace {

/// Persistent single-column forward pass for inference.
class PredictorRuntime {
public:
    explicit PredictorRuntime(const NoisePredictor& p)
        : pred_(p), leaves_(PredictorLeaves::make(g_, p.spec, p.layout, p.params)), checkpoint_(g_.size()) {}

    FlatTensor predict(const FlatTensor& x, int t, const FlatTensor* condition) {
        const int G = static_cast<int>(pred_.spec.grid_area());
        Mat<float> in(static_cast<int>(pred_.spec.input_rows()), 1);
        for (int r = 0; r < G; ++r) in.d[static_cast<size_t>(r)] = x[static_cast<size_t>(r)];
        if (pred_.spec.conditional) {
            if (!condition) throw Error(ErrorKind::Usage, "conditional predictor requires a condition grid");
            for (int r = 0; r < G; ++r) in.d[static_cast<size_t>(G + r)] = (*condition)[static_cast<size_t>(r)];
        }
        std::vector<int> ts{t};
        auto out = predictor_forward(g_, pred_.spec, leaves_, g_.constant(std::move(in)), ts);
        FlatTensor eps = g_.value(out).to_flat();
        eps.shape = {static_cast<uint32_t>(G)};
        g_.truncate(checkpoint_);
        return eps;
    }

private:
    const NoisePredictor& pred_;
    GraphF g_;
    PredictorLeaves leaves_;
    GraphF::Index checkpoint_;
};

} // namespace

double noise_prediction_loss(const NoisePredictor& f, const AdjustedGrid& x0, const AdjustedGrid* condition, int t,
                             const FlatTensor& eps) {
    f.schedule.require_step(t);
    if (f.spec.conditional && !condition)
        throw Error(ErrorKind::Usage, "noise_prediction_loss: conditional predictor requires a condition");
    FlatTensor xt = q_sample(x0.grid, t, eps, f.schedule);
    PredictorRuntime rt(f);
    FlatTensor pred = rt.predict(xt, t, condition ? &condition->grid : nullptr);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred[i]) - eps[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

FlatTensor sample_reverse(const FlatTensor& x_start, int t_prime, const NoisePredictor& f, RngState& rng,
                          const FlatTensor* condition) {
    if (f.spec.conditional && !condition)
        throw Error(ErrorKind::Usage, "sample_reverse: conditional predictor requires a condition");
    if (x_start.size() != f.spec.grid_area())
        throw Error(ErrorKind::Layout, "sample_reverse: grid size does not match predictor");
    PredictorRuntime rt(f);
    auto shape = x_start.shape;
    FlatTensor out = sample_reverse_fn(
        x_start, t_prime, f.schedule, [&](const FlatTensor& x, int t) { return rt.predict(x, t, condition); }, rng);
    out.shape = shape;
    return out;
}

DenoiseOutcome denoise(const GradientVector& perturbed, const NoisePredictor& f, const DenoiseRequest& req,
                       RngState& rng, std::optional<double> scale_override) {
    AdjustedGrid grid = adjust(perturbed, scale_override, req.strict_side);
    if (grid.side() != f.spec.grid_side)
        throw Error(ErrorKind::Layout, "denoise: predictor grid size does not match gradient");

    EntryPoint entry = entry_point(grid, req, f.schedule);
    const FlatTensor* cond = f.spec.conditional ? &grid.grid : nullptr;
    FlatTensor x0 = sample_reverse(entry.x_start, entry.t_prime, f, rng, cond);

    AdjustedGrid out_grid = grid;
    out_grid.grid = std::move(x0);

    DenoiseOutcome out;
    out.recovered = restore(out_grid, perturbed.layout, GradientRole::Recovered);
    out.M = req.M.value_or(std::numeric_limits<double>::quiet_NaN());
    out.c = entry.c;
    out.t_prime = entry.t_prime;
    out.scale = grid.scale;
    return out;
}

} // namespace pgla
