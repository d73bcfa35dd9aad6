#include "pgla/attack.hpp"

#include <algorithm>
#include <cmath>

namespace pgla {

LayerLayout infer_structure(const GradientVector& shared) {
    shared.layout.validate();
    if (shared.values.size() != shared.layout.total())
        throw Error(ErrorKind::Structure, "infer_structure: gradient does not match its transport layout");
    return shared.layout;
}

ModelSpec derive_model_spec(const LayerLayout& layout, const SurrogateOptions& opts) {
    ModelSpec spec;
    const auto& entries = layout.entries;
    if (entries.empty()) throw Error(ErrorKind::Structure, "derive_model_spec: empty layout");

    struct ParamLayer {
        LayerDesc desc;
        std::vector<uint32_t> wshape;
    };
    std::vector<ParamLayer> plane;
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.shape.size() == 2) {
            bool bias = i + 1 < entries.size() && entries[i + 1].shape.size() == 1 &&
                        entries[i + 1].shape[0] == e.shape[0];
            plane.push_back({LayerDesc::dense(static_cast<int>(e.shape[0]), bias), e.shape});
            if (bias) ++i;
        } else if (e.shape.size() == 4) {
            if (e.shape[2] != e.shape[3])
                throw Error(ErrorKind::Structure, "derive_model_spec: non-square kernel");
            bool bias = i + 1 < entries.size() && entries[i + 1].shape.size() == 1 &&
                        entries[i + 1].shape[0] == e.shape[0];
            plane.push_back(
                {LayerDesc::conv2d(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[2]), bias), e.shape});
            if (bias) ++i;
        } else {
            throw Error(ErrorKind::Structure, "derive_model_spec: unrecognizable parameter shape");
        }
    }

    if (plane.front().desc.kind == LayerKind::Dense) {
        spec.input_shape = {plane.front().wshape[1]};
    } else {
        if (opts.input_shape_hint.size() != 3)
            throw Error(ErrorKind::Structure, "derive_model_spec: conv-first layout needs an input shape hint");
        if (opts.input_shape_hint[0] != plane.front().wshape[1])
            throw Error(ErrorKind::Structure, "derive_model_spec: hint channels do not match kernel");
        spec.input_shape = opts.input_shape_hint;
    }

    for (size_t i = 0; i < plane.size(); ++i) {
        spec.layers.push_back(plane[i].desc);
        if (i + 1 < plane.size()) spec.layers.push_back(LayerDesc::activation(opts.activation));
    }

    const auto& last = plane.back();
    spec.classes = last.desc.kind == LayerKind::Dense ? last.desc.out : 0;
    if (spec.classes == 0) throw Error(ErrorKind::Structure, "derive_model_spec: final layer must be dense");

    // shape-compose and require an exact layout roundtrip
    LayerLayout rebuilt = spec.build_layout();
    if (!rebuilt.same_shape_as(layout))
        throw Error(ErrorKind::Structure, "derive_model_spec: layout does not compose into a model");
    return spec;
}

SurrogateHarvest harvest_surrogate_gradients(const LayerLayout& layout, const ProbeDataset& probe, RngState rng,
                                             const SurrogateOptions& opts) {
    if (probe.samples.empty()) throw Error(ErrorKind::Input, "harvest: empty probe dataset");
    ModelSpec spec = derive_model_spec(layout, opts);
    SurrogateHarvest out;
    out.surrogate = build_model(spec, rng.derive(0x737572ull /* "sur" */, 0));
    out.probe_source = probe.source;
    out.gradients.reserve(probe.samples.size());
    const ModelInstance* current = &out.surrogate;
    ModelInstance scratch;
    for (size_t j = 0; j < probe.samples.size(); ++j) {
        if (opts.reinit_every > 0 && j > 0 && j % opts.reinit_every == 0) {
            scratch = build_model(spec, rng.derive(0x737572ull, j));
            current = &scratch;
        }
        const auto& s = probe.samples[j];
        auto [loss, grad] = loss_and_grad_params(*current, s.x, s.y);
        grad.role = GradientRole::Surrogate;
        out.gradients.push_back(std::move(grad));
    }
    return out;
}

PglaResult run_pgla(const GradientVector& shared, const NoisePredictor& predictor, const PglaMode& mode,
                    RngState& rng) {
    int set = (mode.known_sigma ? 1 : 0) + (mode.M ? 1 : 0) + (mode.c_override ? 1 : 0);
    if (set != 1) throw Error(ErrorKind::Usage, "run_pgla: exactly one of known_sigma / M / c_override");

    DenoiseRequest req;
    req.strict_side = mode.strict_side;
    std::optional<double> scale_override;
    if (mode.known_sigma) {
        const double sigma = *mode.known_sigma;
        if (sigma < 0.0) throw Error(ErrorKind::Parameter, "run_pgla: negative sigma");
        const double s_pert = stddev_of(shared.values);
        // deflate: the perturbed std overestimates the clean scale
        const double s_clean = std::sqrt(std::max(s_pert * s_pert - sigma * sigma, 1e-4 * s_pert * s_pert));
        scale_override = s_clean;
        req.M = sigma / s_clean;
    } else if (mode.M) {
        req.M = *mode.M;
    } else {
        req.c_override = *mode.c_override;
    }

    DenoiseOutcome d = denoise(shared, predictor, req, rng, scale_override);
    PglaResult out;
    out.recovered = std::move(d.recovered);
    out.provenance = {d.M, d.c, d.t_prime, d.scale};
    return out;
}

namespace {

struct AdamVec {
    std::vector<double> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    uint64_t t = 0;

    explicit AdamVec(size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& theta, const std::vector<double>& grad, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

std::vector<double> softmax_of(const std::vector<double>& u) {
    double mx = *std::max_element(u.begin(), u.end());
    double s = 0.0;
    std::vector<double> p(u.size());
    for (size_t i = 0; i < u.size(); ++i) s += (p[i] = std::exp(u[i] - mx));
    for (auto& v : p) v /= s;
    return p;
}

} // namespace

InversionResult invert_gradients(const GradientVector& target, const ModelInstance& model,
                                 const InversionConfig& cfg, RngState rng, const FlatTensor* x_init,
                                 const FlatTensor* y_logits_init) {
    if (!target.layout.same_shape_as(model.layout))
        throw Error(ErrorKind::Layout, "invert_gradients: target layout mismatch");
    const size_t D = model.spec.input_size();
    const int K = model.spec.classes;
    if (x_init && x_init->size() != D) throw Error(ErrorKind::Input, "invert_gradients: bad x init size");
    if (y_logits_init && y_logits_init->size() != static_cast<size_t>(K))
        throw Error(ErrorKind::Input, "invert_gradients: bad label init size");

    std::vector<double> x0(D), u0(static_cast<size_t>(K), 0.0);
    if (x_init) {
        for (size_t i = 0; i < D; ++i) x0[i] = (*x_init)[i];
    } else {
        for (size_t i = 0; i < D; ++i) x0[i] = rng.next_unit_open();
    }
    if (y_logits_init)
        for (int i = 0; i < K; ++i) u0[static_cast<size_t>(i)] = (*y_logits_init)[static_cast<size_t>(i)];

    InversionResult best_overall;
    best_overall.failed = true;
    best_overall.best_loss = std::numeric_limits<double>::infinity();

    double step = cfg.step;
    for (uint32_t attempt = 0; attempt <= cfg.restarts; ++attempt) {
        std::vector<double> x = x0, u = u0;
        AdamVec adam(D + static_cast<size_t>(K));

        Graph g;
        auto params = g.leaf(Mat<double>::from_flat(model.params, static_cast<int>(model.params.size()), 1));
        auto xleaf = g.leaf(Mat<double>::zeros(static_cast<int>(D), 1));
        auto uleaf = g.leaf(Mat<double>::zeros(K, 1));
        auto tgt = g.constant(Mat<double>::from_flat(target.values, static_cast<int>(target.values.size()), 1));
        Graph::Index checkpoint = g.size();

        InversionResult res;
        res.best_loss = std::numeric_limits<double>::infinity();
        bool diverged = false;

        // full step for the first half, then decay; a fixed step keeps
        // adaptive-moment descent oscillating around the optimum instead of
        // settling into it
        auto step_at = [&](uint32_t it) {
            double frac = static_cast<double>(it) / static_cast<double>(cfg.iterations);
            if (frac < 0.5) return step;
            return step / (1.0 + 38.0 * (frac - 0.5));
        };

        for (uint32_t it = 0; it < cfg.iterations; ++it) {
            {
                Mat<double>& xv = g.leaf_value(xleaf);
                std::copy(x.begin(), x.end(), xv.d.begin());
                Mat<double>& uv = g.leaf_value(uleaf);
                std::copy(u.begin(), u.end(), uv.d.begin());
            }
            // label distribution via softmax so the match loss sees valid soft labels
            auto lse_u = g.logsumexp_cols(uleaf);
            auto ydist = g.exp_(g.sub(uleaf, g.bcast_all(lse_u, K, 1)));
            auto logits = modelgraph::forward_logits(g, model.spec, model.layout, params, xleaf);
            auto ce = modelgraph::cross_entropy(g, logits, ydist);
            std::array<Graph::Index, 1> wrt1{params};
            auto grads = g.backward(ce, wrt1);
            auto diff = g.sub(grads[0], tgt);
            auto match = g.sum_all(g.mul(diff, diff));
            const double loss = g.value(match).d[0];

            if (!std::isfinite(loss)) {
                diverged = true;
                g.truncate(checkpoint);
                break;
            }
            if (loss < res.best_loss) {
                res.best_loss = loss;
                res.x_best = FlatTensor::vector_of(std::vector<float>(x.begin(), x.end()));
                auto p = softmax_of(u);
                res.y_soft = FlatTensor::vector_of(std::vector<float>(p.begin(), p.end()));
                res.y_best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
            }
            res.trace.push_back(res.best_loss);

            std::array<Graph::Index, 2> wrt2{xleaf, uleaf};
            auto igrads = g.backward(match, wrt2);
            const Mat<double>& dx = g.value(igrads[0]);
            const Mat<double>& du = g.value(igrads[1]);
            std::vector<double> theta(D + static_cast<size_t>(K));
            std::copy(x.begin(), x.end(), theta.begin());
            std::copy(u.begin(), u.end(), theta.begin() + static_cast<long>(D));
            std::vector<double> grad(D + static_cast<size_t>(K));
            std::copy(dx.d.begin(), dx.d.end(), grad.begin());
            std::copy(du.d.begin(), du.d.end(), grad.begin() + static_cast<long>(D));
            adam.step(theta, grad, step_at(it));
            for (size_t i = 0; i < D; ++i) x[i] = std::clamp(theta[i], 0.0, 1.0); // images live in [0,1]
            for (int i = 0; i < K; ++i) u[static_cast<size_t>(i)] = theta[D + static_cast<size_t>(i)];

            g.truncate(checkpoint);
        }

        res.restarts_used = attempt;
        if (!diverged) {
            res.failed = false;
            return res;
        }
        if (res.best_loss < best_overall.best_loss) {
            double keep_best = res.best_loss;
            auto keep = std::move(res);
            keep.failed = true;
            keep.best_loss = keep_best;
            best_overall = std::move(keep);
        }
        step *= 0.5;
    }
    return best_overall;
}

AttackReport evaluate(const GradientVector* recovered, const GradientVector* clean, const FlatTensor* x_rec,
                      const FlatTensor* x_true, std::optional<int> y_rec, std::optional<int> y_true) {
    AttackReport r;
    if (recovered && clean) {
        // gradient metrics over the concatenated vector (not per-layer averages)
        r.cos_g = cosine_similarity(recovered->values, clean->values).value;
        r.psnr_g = psnr(clean->values, recovered->values, gradient_peak(clean->values)).value;
    }
    if (x_rec && x_true) r.psnr_i = psnr(*x_true, *x_rec, 1.0).value;
    if (y_rec && y_true) r.lra = (*y_rec == *y_true) ? 1.0 : 0.0;
    return r;
}

} // namespace pgla
