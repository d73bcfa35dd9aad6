#include "pgla/perturb.hpp"

#include <cmath>

namespace pgla {

PerturbationSpec PerturbationSpec::gaussian(double eps, double delta, double clip, uint64_t m) {
    PerturbationSpec s;
    s.mechanism = Mechanism::GaussianDp;
    s.epsilon = eps;
    s.delta = delta;
    s.clip = clip;
    s.min_local_size = m;
    s.sigma = client_sigma(s);
    return s;
}

PerturbationSpec PerturbationSpec::laplace(double eps, double clip, uint64_t m) {
    PerturbationSpec s;
    s.mechanism = Mechanism::LaplaceDp;
    s.epsilon = eps;
    s.delta = 0.0;
    s.clip = clip;
    s.min_local_size = m;
    s.sigma = client_sigma(s);
    return s;
}

PerturbationSpec PerturbationSpec::raw(Mechanism mech, double sigma) {
    if (sigma < 0.0) throw Error(ErrorKind::Parameter, "perturbation: negative sigma");
    PerturbationSpec s;
    s.mechanism = mech;
    s.sigma = sigma;
    return s;
}

std::pair<double, double> compose(const PrivacyAccountant& acct) {
    double e = 0.0, d = 0.0;
    for (const auto& [ei, di] : acct.entries) {
        e += ei;
        d += di;
    }
    return {e, d};
}

double client_sigma(const PerturbationSpec& spec) {
    if (spec.mechanism == Mechanism::PerLayerRandom)
        throw Error(ErrorKind::Parameter, "client_sigma: not a DP mechanism");
    if (spec.epsilon <= 0.0) throw Error(ErrorKind::Parameter, "client_sigma: epsilon must be positive");
    if (spec.clip <= 0.0) throw Error(ErrorKind::Parameter, "client_sigma: clip must be positive");
    if (spec.min_local_size < 1) throw Error(ErrorKind::Parameter, "client_sigma: m must be >= 1");
    const double sens = 2.0 * spec.clip / static_cast<double>(spec.min_local_size);
    if (spec.mechanism == Mechanism::LaplaceDp) return sens / spec.epsilon;
    if (spec.delta <= 0.0 || spec.delta >= 1.0)
        throw Error(ErrorKind::Parameter, "client_sigma: gaussian mechanism needs delta in (0,1)");
    return sens * std::sqrt(2.0 * std::log(1.25 / spec.delta)) / spec.epsilon;
}

double server_sigma(const FlTopology& topo, double clip, uint64_t m, double epsilon, double c_dp) {
    if (topo.clients < 1 || topo.t_dps < 1 || topo.l_dpc < 1)
        throw Error(ErrorKind::Parameter, "server_sigma: invalid topology");
    const double n = static_cast<double>(topo.clients);
    const double t = static_cast<double>(topo.t_dps);
    const double l = static_cast<double>(topo.l_dpc);
    if (t <= l * std::sqrt(n)) return 0.0;
    if (epsilon <= 0.0) throw Error(ErrorKind::Parameter, "server_sigma: epsilon must be positive");
    const double sens = (2.0 * clip / static_cast<double>(m)) * std::sqrt(t * t - l * l * n) / n;
    return c_dp * sens / epsilon;
}

GradientVector clip_gradient(const GradientVector& g, double clip) {
    if (clip <= 0.0) throw Error(ErrorKind::Parameter, "clip_gradient: threshold must be positive");
    const double norm = l2_norm(g.values);
    if (norm <= clip) return g;
    const float f = static_cast<float>(clip / norm);
    GradientVector out = g;
    for (auto& v : out.values.data) v *= f;
    return out;
}

namespace {

void add_noise_span(std::vector<float>& values, size_t off, size_t len, Mechanism mech, double sigma, RngState& rng) {
    if (sigma == 0.0) return;
    if (mech == Mechanism::LaplaceDp) {
        for (size_t i = 0; i < len; ++i) values[off + i] += static_cast<float>(rng.next_laplace(sigma));
    } else {
        for (size_t i = 0; i < len; ++i) values[off + i] += static_cast<float>(sigma * rng.next_gaussian());
    }
}

} // namespace

GradientVector perturb(const GradientVector& g, const PerturbationSpec& spec, RngState& rng) {
    if (spec.sigma < 0.0) throw Error(ErrorKind::Parameter, "perturb: negative sigma");
    GradientVector out = g;
    out.role = GradientRole::Perturbed;
    Mechanism m = spec.mechanism == Mechanism::LaplaceDp ? Mechanism::LaplaceDp : Mechanism::GaussianDp;
    add_noise_span(out.values.data, 0, out.values.size(), m, spec.sigma, rng);
    out.values.require_finite("perturb");
    return out;
}

PerLayerResult perturb_per_layer(const GradientVector& g, const std::vector<PerturbationSpec>& specs, RngState& rng) {
    if (specs.size() != g.layout.entries.size())
        throw Error(ErrorKind::Layout, "perturb_per_layer: one spec per layout entry required");
    PerLayerResult out;
    out.gradient = g;
    out.gradient.role = GradientRole::Perturbed;
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto& e = g.layout.entries[i];
        Mechanism m = specs[i].mechanism == Mechanism::LaplaceDp ? Mechanism::LaplaceDp : Mechanism::GaussianDp;
        add_noise_span(out.gradient.values.data, e.offset, e.length, m, specs[i].sigma, rng);
        out.realized.push_back({m, specs[i].sigma});
    }
    out.gradient.values.require_finite("perturb_per_layer");
    return out;
}

RoundResult simulate_round(const std::vector<ClientSim>& clients, const PerturbationSpec& spec,
                           const FlTopology& topo, uint64_t round, RngState& rng, PrivacyAccountant& acct,
                           double server_c_dp) {
    if (clients.empty()) throw Error(ErrorKind::Input, "simulate_round: no clients");

    RoundResult out;
    for (size_t ci = 0; ci < clients.size(); ++ci) {
        const ClientSim& c = clients[ci];
        if (c.data.empty()) throw Error(ErrorKind::Input, "simulate_round: client with no data");

        // mean gradient over the client's local batch
        std::vector<double> acc(c.model.layout.total(), 0.0);
        for (const auto& s : c.data) {
            auto [loss, grad] = loss_and_grad_params(c.model, s.x, s.y);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += grad.values[i];
        }
        std::vector<float> mean(acc.size());
        for (size_t i = 0; i < acc.size(); ++i)
            mean[i] = static_cast<float>(acc[i] / static_cast<double>(c.data.size()));
        GradientVector local(FlatTensor::vector_of(std::move(mean)), c.model.layout, GradientRole::Clean);

        GradientVector clipped = clip_gradient(local, spec.clip > 0.0 ? spec.clip : 1.0);
        RngState stream = rng.derive(0x636c69656e74ull /* "client" */, round, ci);
        GradientVector shared;
        if (spec.mechanism == Mechanism::PerLayerRandom) {
            // FL-PP: gaussian or laplace noise drawn per layer
            std::vector<PerturbationSpec> specs;
            for (size_t li = 0; li < clipped.layout.entries.size(); ++li)
                specs.push_back(PerturbationSpec::raw(
                    stream.next_u64() % 2 ? Mechanism::GaussianDp : Mechanism::LaplaceDp, spec.sigma));
            shared = perturb_per_layer(clipped, specs, stream).gradient;
        } else {
            shared = perturb(clipped, spec, stream);
        }

        switch (spec.mechanism) {
            case Mechanism::GaussianDp: acct.add(spec.epsilon, spec.delta); break;
            case Mechanism::LaplaceDp: acct.add(spec.epsilon, 0.0); break;
            case Mechanism::PerLayerRandom: break; // not DP-calibrated
        }
        out.clean.push_back(std::move(clipped));
        out.shared.push_back(std::move(shared));
    }

    if (topo.server_noise) {
        // unweighted mean of the uploaded gradients, then NbAFL server noise
        const auto& layout = out.shared.front().layout;
        std::vector<double> acc(layout.total(), 0.0);
        for (const auto& s : out.shared)
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += s.values[i];
        std::vector<float> mean(acc.size());
        for (size_t i = 0; i < acc.size(); ++i)
            mean[i] = static_cast<float>(acc[i] / static_cast<double>(out.shared.size()));
        GradientVector agg(FlatTensor::vector_of(std::move(mean)), layout, GradientRole::Perturbed);
        double ssigma = server_sigma(topo, spec.clip, spec.min_local_size, spec.epsilon, server_c_dp);
        PerturbationSpec sspec = PerturbationSpec::raw(Mechanism::GaussianDp, ssigma);
        RngState stream = rng.derive(0x736572766572ull /* "server" */, round, 0);
        out.aggregate = perturb(agg, sspec, stream);
        if (ssigma > 0.0) acct.add(spec.epsilon, spec.delta);
    }
    return out;
}

} // namespace pgla
