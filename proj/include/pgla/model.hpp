#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pgla/graph.hpp"
#include "pgla/layout.hpp"
#include "pgla/rng.hpp"

namespace pgla {

enum class LayerKind { Dense, Conv2d, Activation };
enum class Activation { Sigmoid, Tanh };

struct LayerDesc {
    LayerKind kind = LayerKind::Dense;
    int out = 0;          // dense fan-out / conv output channels
    int kernel = 0;       // conv kernel side
    bool bias = true;
    Activation act = Activation::Sigmoid;

    static LayerDesc dense(int out, bool bias = true) { return {LayerKind::Dense, out, 0, bias, Activation::Sigmoid}; }
    static LayerDesc conv2d(int out_channels, int kernel, bool bias = true) {
        return {LayerKind::Conv2d, out_channels, kernel, bias, Activation::Sigmoid};
    }
    static LayerDesc activation(Activation a) { return {LayerKind::Activation, 0, 0, false, a}; }
};

/// Layer stack for the client / surrogate model family. Dense and small 2-d
/// convolutions with smooth activations only; the downstream task is
/// classification with `classes` outputs.
struct ModelSpec {
    std::vector<uint32_t> input_shape; // {D} flat or {C, H, W}
    int classes = 0;
    std::vector<LayerDesc> layers;

    uint64_t input_size() const {
        uint64_t n = 1;
        for (auto d : input_shape) n *= d;
        return input_shape.empty() ? 0 : n;
    }

    /// Shape-composes the stack; returns the parameter layout.
    LayerLayout build_layout() const;
    uint64_t param_count() const { return build_layout().total(); }
};

struct ModelInstance {
    ModelSpec spec;
    FlatTensor params;
    LayerLayout layout;
};

struct ProbeSample {
    FlatTensor x;
    int y = 0;
};

enum class ProbeSource { Synthetic, IdxFile };

struct ProbeDataset {
    std::vector<ProbeSample> samples;
    ProbeSource source = ProbeSource::Synthetic;
};

/// Xavier-uniform weights, zero biases; deterministic under the given stream.
ModelInstance build_model(const ModelSpec& spec, RngState rng);

/// Cross-entropy loss and exact parameter gradient for one labelled sample.
std::pair<double, GradientVector> loss_and_grad_params(const ModelInstance& model, const FlatTensor& x, int y);

struct MatchGradients {
    double loss = 0.0;          // || grad(dummy) - target ||^2
    FlatTensor dx;              // d loss / d dummy_x
    FlatTensor dy;              // d loss / d dummy_y
};

/// Gradient-matching loss and its exact gradients w.r.t. the dummy input and
/// the soft label, obtained by differentiating through the parameter-gradient
/// computation (reverse over reverse). dummy_y is a label distribution; pass
/// a one-hot vector to reproduce a hard-label gradient exactly.
MatchGradients grad_match_loss_and_input_grad(const ModelInstance& model, const FlatTensor& dummy_x,
                                              const FlatTensor& dummy_y, const GradientVector& target_grad);

namespace modelgraph {

/// Builds the classifier forward pass on an existing graph; params is a
/// flat [L x 1] node, x is [D x 1]. Returns the logits node [classes x 1].
template <typename S>
typename GraphT<S>::Index forward_logits(GraphT<S>& g, const ModelSpec& spec, const LayerLayout& layout,
                                         typename GraphT<S>::Index params, typename GraphT<S>::Index x);

/// Cross-entropy against a label-distribution node: lse(z)*sum(y) - <y, z>.
template <typename S>
typename GraphT<S>::Index cross_entropy(GraphT<S>& g, typename GraphT<S>::Index logits,
                                        typename GraphT<S>::Index label_dist);

} // namespace modelgraph

} // namespace pgla
