#include "pgla/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "pgla/io.hpp"

namespace pgla {

using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
    throw Error(ErrorKind::Config, "config: field '" + field + "': " + why);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        bad_field(path + key, std::string("wrong type (") + e.what() + ")");
    }
}

ModelSpec parse_model(const json& j) {
    ModelSpec spec;
    if (!j.contains("input")) bad_field("model.input", "required");
    for (const auto& d : j.at("input")) {
        auto v = d.get<int64_t>();
        if (v < 1) bad_field("model.input", "dimensions must be positive");
        spec.input_shape.push_back(static_cast<uint32_t>(v));
    }
    spec.classes = get_or<int>(j, "classes", 0, "model.");
    if (spec.classes < 1) bad_field("model.classes", "must be >= 1");
    if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty())
        bad_field("model.layers", "required non-empty array");
    for (const auto& lj : j.at("layers")) {
        std::string kind = get_or<std::string>(lj, "kind", "", "model.layers.");
        if (kind == "dense") {
            int out = get_or<int>(lj, "out", 0, "model.layers.");
            if (out < 1) bad_field("model.layers.out", "must be >= 1");
            spec.layers.push_back(LayerDesc::dense(out, get_or<bool>(lj, "bias", true, "model.layers.")));
        } else if (kind == "conv2d") {
            int out = get_or<int>(lj, "out", 0, "model.layers.");
            int k = get_or<int>(lj, "kernel", 0, "model.layers.");
            if (out < 1 || k < 1) bad_field("model.layers", "conv2d needs out >= 1 and kernel >= 1");
            spec.layers.push_back(LayerDesc::conv2d(out, k, get_or<bool>(lj, "bias", true, "model.layers.")));
        } else if (kind == "activation") {
            std::string fn = get_or<std::string>(lj, "fn", "sigmoid", "model.layers.");
            if (fn == "sigmoid")
                spec.layers.push_back(LayerDesc::activation(Activation::Sigmoid));
            else if (fn == "tanh")
                spec.layers.push_back(LayerDesc::activation(Activation::Tanh));
            else
                bad_field("model.layers.fn", "unknown activation '" + fn + "'");
        } else {
            bad_field("model.layers.kind", "unknown kind '" + kind + "'");
        }
    }
    try {
        spec.build_layout();
    } catch (const Error& e) {
        bad_field("model", e.what());
    }
    return spec;
}

PerturbationSpec parse_perturbation(const json& j) {
    std::string mech = get_or<std::string>(j, "mechanism", "gaussian-dp", "perturbation.");
    double eps = get_or<double>(j, "epsilon", 1.0, "perturbation.");
    double delta = get_or<double>(j, "delta", 1e-5, "perturbation.");
    double clip = get_or<double>(j, "clip", 1.0, "perturbation.");
    auto m = get_or<uint64_t>(j, "m", 1, "perturbation.");
    try {
        if (mech == "gaussian-dp") {
            if (delta <= 0.0 || delta >= 1.0) bad_field("perturbation.delta", "must lie in (0,1) for gaussian-dp");
            return PerturbationSpec::gaussian(eps, delta, clip, m);
        }
        if (mech == "laplace-dp") return PerturbationSpec::laplace(eps, clip, m);
        if (mech == "per-layer-random") {
            auto spec = PerturbationSpec::raw(Mechanism::PerLayerRandom, get_or<double>(j, "sigma", 0.0, "perturbation."));
            spec.clip = clip;
            spec.epsilon = eps;
            spec.min_local_size = m;
            return spec;
        }
    } catch (const Error& e) {
        bad_field("perturbation", e.what());
    }
    bad_field("perturbation.mechanism", "unknown mechanism '" + mech + "'");
}

json canonicalize(const ExperimentConfig& c) {
    // nlohmann objects iterate in key order, so dumping is canonical
    json m;
    m["input"] = c.model.input_shape;
    m["classes"] = c.model.classes;
    json layers = json::array();
    for (const auto& l : c.model.layers) {
        json lj;
        if (l.kind == LayerKind::Dense) {
            lj["kind"] = "dense";
            lj["out"] = l.out;
            lj["bias"] = l.bias;
        } else if (l.kind == LayerKind::Conv2d) {
            lj["kind"] = "conv2d";
            lj["out"] = l.out;
            lj["kernel"] = l.kernel;
            lj["bias"] = l.bias;
        } else {
            lj["kind"] = "activation";
            lj["fn"] = l.act == Activation::Sigmoid ? "sigmoid" : "tanh";
        }
        layers.push_back(lj);
    }
    m["layers"] = layers;

    json j;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    j["model"] = m;
    j["dataset"] = {{"source", c.dataset.source},     {"count", c.dataset.count},
                    {"image_side", c.dataset.image_side}, {"channels", c.dataset.channels},
                    {"classes", c.dataset.classes},   {"idx_images", c.dataset.idx_images},
                    {"idx_labels", c.dataset.idx_labels}};
    const char* mech = c.perturbation.mechanism == Mechanism::GaussianDp  ? "gaussian-dp"
                       : c.perturbation.mechanism == Mechanism::LaplaceDp ? "laplace-dp"
                                                                          : "per-layer-random";
    j["perturbation"] = {{"mechanism", mech},
                         {"epsilon", c.perturbation.epsilon},
                         {"delta", c.perturbation.delta},
                         {"clip", c.perturbation.clip},
                         {"m", c.perturbation.min_local_size},
                         {"sigma", c.perturbation.sigma}};
    j["topology"] = {{"clients", c.topology.clients},
                     {"t_dps", c.topology.t_dps},
                     {"l_dpc", c.topology.l_dpc},
                     {"server_noise", c.topology.server_noise}};
    j["schedule"] = {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["gradshape"] = {{"strict_side", c.gradshape.strict_side}};
    j["train"] = {{"steps", c.train.steps},       {"batch", c.train.batch},
                  {"lr", c.train.lr},             {"hidden", c.train.hidden},
                  {"blocks", c.train.blocks},     {"time_dim", c.train.time_dim},
                  {"conditional", c.train.conditional}, {"val_fraction", c.train.val_fraction},
                  {"log_every", c.train.log_every},     {"weighted_loss", c.train.weighted_loss},
                  {"condition_source", c.condition_source}};
    j["harvest"] = {{"probes", c.harvest.probes}};
    j["attack"] = {{"iterations", c.attack.iterations}, {"step", c.attack.step},
                   {"restarts", c.attack.restarts},     {"entry", c.attack.entry},
                   {"m_value", c.attack.m_value},       {"c_override", c.attack.c_override},
                   {"trials", c.attack.trials},         {"run_inversion", c.attack.run_inversion},
                   {"local_batch", c.attack.local_batch}};
    return j;
}

} // namespace

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

ExperimentConfig parse_config_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, std::string("config: not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::Config, "config: top level must be an object");

    ExperimentConfig c;
    c.seed = get_or<uint64_t>(j, "seed", 1, "");
    c.out_dir = get_or<std::string>(j, "out", "out", "");

    if (!j.contains("model")) bad_field("model", "required");
    c.model = parse_model(j.at("model"));

    if (j.contains("dataset")) {
        const auto& dj = j.at("dataset");
        c.dataset.source = get_or<std::string>(dj, "source", "synthetic", "dataset.");
        if (c.dataset.source != "synthetic" && c.dataset.source != "idx")
            bad_field("dataset.source", "must be 'synthetic' or 'idx'");
        c.dataset.count = get_or<uint32_t>(dj, "count", 64, "dataset.");
        c.dataset.image_side = get_or<uint32_t>(dj, "image_side", 16, "dataset.");
        c.dataset.channels = get_or<uint32_t>(dj, "channels", 1, "dataset.");
        c.dataset.classes = get_or<uint32_t>(dj, "classes", 10, "dataset.");
        c.dataset.idx_images = get_or<std::string>(dj, "idx_images", "", "dataset.");
        c.dataset.idx_labels = get_or<std::string>(dj, "idx_labels", "", "dataset.");
        if (c.dataset.source == "idx" && (c.dataset.idx_images.empty() || c.dataset.idx_labels.empty()))
            bad_field("dataset.idx_images", "idx source needs image and label paths");
        if (c.dataset.count < 1) bad_field("dataset.count", "must be >= 1");
    }

    if (j.contains("perturbation")) c.perturbation = parse_perturbation(j.at("perturbation"));
    else c.perturbation = PerturbationSpec::gaussian(1.0, 1e-5, 1.0, 1);

    if (j.contains("topology")) {
        const auto& tj = j.at("topology");
        c.topology.clients = get_or<uint64_t>(tj, "clients", 1, "topology.");
        c.topology.t_dps = get_or<uint64_t>(tj, "t_dps", 1, "topology.");
        c.topology.l_dpc = get_or<uint64_t>(tj, "l_dpc", 1, "topology.");
        c.topology.server_noise = get_or<bool>(tj, "server_noise", false, "topology.");
        if (c.topology.clients < 1) bad_field("topology.clients", "must be >= 1");
        if (c.topology.t_dps < 1 || c.topology.l_dpc < 1) bad_field("topology", "t_dps and l_dpc must be >= 1");
    }

    if (j.contains("schedule")) {
        const auto& sj = j.at("schedule");
        c.schedule.T = get_or<int>(sj, "T", 1000, "schedule.");
        c.schedule.beta_start = get_or<double>(sj, "beta_start", 1e-4, "schedule.");
        c.schedule.beta_end = get_or<double>(sj, "beta_end", 0.02, "schedule.");
        try {
            make_schedule(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end);
        } catch (const Error& e) {
            bad_field("schedule", e.what());
        }
    }

    if (j.contains("gradshape"))
        c.gradshape.strict_side = get_or<bool>(j.at("gradshape"), "strict_side", true, "gradshape.");

    if (j.contains("train")) {
        const auto& tj = j.at("train");
        c.train.steps = get_or<uint32_t>(tj, "steps", 20000, "train.");
        c.train.batch = get_or<uint32_t>(tj, "batch", 32, "train.");
        c.train.lr = get_or<double>(tj, "lr", 1e-3, "train.");
        c.train.hidden = get_or<uint32_t>(tj, "hidden", 64, "train.");
        c.train.blocks = get_or<uint32_t>(tj, "blocks", 2, "train.");
        c.train.time_dim = get_or<uint32_t>(tj, "time_dim", 64, "train.");
        c.train.conditional = get_or<bool>(tj, "conditional", false, "train.");
        c.train.val_fraction = get_or<double>(tj, "val_fraction", 0.1, "train.");
        c.train.log_every = get_or<uint32_t>(tj, "log_every", 500, "train.");
        c.train.weighted_loss = get_or<bool>(tj, "weighted_loss", false, "train.");
        c.condition_source = get_or<std::string>(tj, "condition_source", "perturbed-surrogate", "train.");
        if (c.condition_source != "perturbed-surrogate" && c.condition_source != "shared")
            bad_field("train.condition_source", "must be 'perturbed-surrogate' or 'shared'");
        if (c.train.steps < 1 || c.train.batch < 1) bad_field("train", "steps and batch must be >= 1");
        if (!(c.train.lr > 0.0)) bad_field("train.lr", "must be > 0");
        if (c.train.val_fraction < 0.0 || c.train.val_fraction >= 1.0)
            bad_field("train.val_fraction", "must lie in [0,1)");
        if (c.train.log_every < 1) bad_field("train.log_every", "must be >= 1");
    }

    if (j.contains("harvest")) {
        c.harvest.probes = get_or<uint32_t>(j.at("harvest"), "probes", 2000, "harvest.");
        if (c.harvest.probes < 1) bad_field("harvest.probes", "must be >= 1");
    }

    if (j.contains("attack")) {
        const auto& aj = j.at("attack");
        c.attack.iterations = get_or<uint32_t>(aj, "iterations", 300, "attack.");
        c.attack.step = get_or<double>(aj, "step", 0.1, "attack.");
        c.attack.restarts = get_or<uint32_t>(aj, "restarts", 3, "attack.");
        c.attack.entry = get_or<std::string>(aj, "entry", "known-sigma", "attack.");
        c.attack.m_value = get_or<double>(aj, "m_value", 0.0, "attack.");
        c.attack.c_override = get_or<double>(aj, "c_override", 0.5, "attack.");
        c.attack.trials = get_or<uint32_t>(aj, "trials", 4, "attack.");
        c.attack.run_inversion = get_or<bool>(aj, "run_inversion", true, "attack.");
        c.attack.local_batch = get_or<uint32_t>(aj, "local_batch", 1, "attack.");
        if (c.attack.entry != "known-sigma" && c.attack.entry != "known-m" && c.attack.entry != "blind-c")
            bad_field("attack.entry", "must be 'known-sigma', 'known-m' or 'blind-c'");
        if (c.attack.entry == "blind-c" && !(c.attack.c_override > 0.0 && c.attack.c_override < 1.0))
            bad_field("attack.c_override", "must lie in (0,1)");
        if (c.attack.trials < 1) bad_field("attack.trials", "must be >= 1");
        if (c.attack.local_batch < 1) bad_field("attack.local_batch", "must be >= 1");
        if (!(c.attack.step > 0.0)) bad_field("attack.step", "must be > 0");
    }

    // epsilon outside (0,1) is legal but outside the calibration theorem's
    // stated range; surface it once
    if (c.perturbation.mechanism == Mechanism::GaussianDp && c.perturbation.epsilon > 1.0)
        std::fputs("warning: gaussian-dp epsilon > 1 is outside the calibration theorem's range\n", stderr);

    c.canonical_json = canonicalize(c).dump();
    c.digest = fnv1a64(c.canonical_json);
    c.digest_hex = digest_hex(c.digest);
    return c;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::MissingArtifact, path + ": cannot open config");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str());
}

std::string default_config_json() {
    json j = {
        {"seed", 1},
        {"out", "out"},
        {"model",
         {{"input", {256}},
          {"classes", 10},
          {"layers",
           {{{"kind", "dense"}, {"out", 32}},
            {{"kind", "activation"}, {"fn", "sigmoid"}},
            {{"kind", "dense"}, {"out", 10}}}}}},
        {"dataset", {{"source", "synthetic"}, {"count", 64}, {"image_side", 16}, {"channels", 1}, {"classes", 10}}},
        {"perturbation",
         {{"mechanism", "gaussian-dp"}, {"epsilon", 2.0}, {"delta", 1e-5}, {"clip", 1.0}, {"m", 300}}},
        {"topology", {{"clients", 2}, {"t_dps", 1}, {"l_dpc", 1}, {"server_noise", false}}},
        {"schedule", {{"T", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
        {"train",
         {{"steps", 20000},
          {"batch", 32},
          {"lr", 1e-3},
          {"hidden", 64},
          {"blocks", 2},
          {"time_dim", 64},
          {"conditional", false},
          {"val_fraction", 0.1}}},
        {"harvest", {{"probes", 2000}}},
        {"attack",
         {{"iterations", 300}, {"step", 0.1}, {"restarts", 3}, {"entry", "known-sigma"}, {"trials", 4}}},
    };
    return j.dump(2) + "\n";
}

} // namespace pgla
