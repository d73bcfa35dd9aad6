#include "pgla/model.hpp"

#include <cmath>

namespace pgla {

namespace {

struct ShapeCursor {
    std::vector<uint32_t> shape;

    uint64_t flat() const {
        uint64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

const char* kind_prefix(LayerKind k) { return k == LayerKind::Dense ? "dense" : "conv"; }

} // namespace

LayerLayout ModelSpec::build_layout() const {
    if (input_shape.empty() || input_size() == 0) throw Error(ErrorKind::Spec, "model: empty input shape");
    if (classes < 1) throw Error(ErrorKind::Spec, "model: class count must be >= 1");
    if (layers.empty()) throw Error(ErrorKind::Spec, "model: no layers");

    LayerLayout layout;
    ShapeCursor cur{input_shape};
    int param_idx = 0;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::Dense: {
                if (l.out < 1) throw Error(ErrorKind::Spec, "dense layer: fan-out must be >= 1");
                uint64_t in = cur.flat();
                std::string base = std::string(kind_prefix(l.kind)) + std::to_string(param_idx++);
                layout.push(base + ".weight", {static_cast<uint32_t>(l.out), static_cast<uint32_t>(in)});
                if (l.bias) layout.push(base + ".bias", {static_cast<uint32_t>(l.out)});
                cur.shape = {static_cast<uint32_t>(l.out)};
                break;
            }
            case LayerKind::Conv2d: {
                if (cur.shape.size() != 3)
                    throw Error(ErrorKind::Spec, "conv layer: input must be channels x height x width");
                uint32_t c = cur.shape[0], h = cur.shape[1], w = cur.shape[2];
                if (l.kernel < 1 || static_cast<uint32_t>(l.kernel) > h || static_cast<uint32_t>(l.kernel) > w)
                    throw Error(ErrorKind::Spec, "conv layer: kernel larger than input");
                if (l.out < 1) throw Error(ErrorKind::Spec, "conv layer: output channels must be >= 1");
                std::string base = std::string(kind_prefix(l.kind)) + std::to_string(param_idx++);
                layout.push(base + ".weight", {static_cast<uint32_t>(l.out), c, static_cast<uint32_t>(l.kernel),
                                               static_cast<uint32_t>(l.kernel)});
                if (l.bias) layout.push(base + ".bias", {static_cast<uint32_t>(l.out)});
                cur.shape = {static_cast<uint32_t>(l.out), h - l.kernel + 1, w - l.kernel + 1};
                break;
            }
            case LayerKind::Activation:
                break;
        }
    }
    if (cur.flat() != static_cast<uint64_t>(classes))
        throw Error(ErrorKind::Spec, "model: final layer size does not match class count");
    layout.validate();
    return layout;
}

ModelInstance build_model(const ModelSpec& spec, RngState rng) {
    LayerLayout layout = spec.build_layout();
    std::vector<float> params(layout.total(), 0.0f);

    ShapeCursor cur{spec.input_shape};
    size_t entry = 0;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Activation) continue;
        uint64_t fan_in, fan_out;
        if (l.kind == LayerKind::Dense) {
            fan_in = cur.flat();
            fan_out = l.out;
            cur.shape = {static_cast<uint32_t>(l.out)};
        } else {
            fan_in = static_cast<uint64_t>(cur.shape[0]) * l.kernel * l.kernel;
            fan_out = static_cast<uint64_t>(l.out) * l.kernel * l.kernel;
            cur.shape = {static_cast<uint32_t>(l.out), cur.shape[1] - l.kernel + 1, cur.shape[2] - l.kernel + 1};
        }
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        const LayerEntry& we = layout.entries[entry++];
        for (uint64_t i = 0; i < we.length; ++i)
            params[we.offset + i] = static_cast<float>(a * (2.0 * rng.next_unit_open() - 1.0));
        if (l.bias) ++entry; // biases stay zero
    }

    return ModelInstance{spec, FlatTensor::vector_of(std::move(params)), std::move(layout)};
}

namespace modelgraph {

template <typename S>
typename GraphT<S>::Index forward_logits(GraphT<S>& g, const ModelSpec& spec, const LayerLayout& layout,
                                         typename GraphT<S>::Index params, typename GraphT<S>::Index x) {
    using Index = typename GraphT<S>::Index;
    ShapeCursor cur{spec.input_shape};
    Index h = x;
    size_t entry = 0;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Dense: {
                uint64_t in = cur.flat();
                const LayerEntry& we = layout.entries[entry++];
                Index w = g.reshape(g.slice_rows(params, static_cast<int>(we.offset), static_cast<int>(we.length)),
                                    l.out, static_cast<int>(in));
                h = g.matmul(w, h);
                if (l.bias) {
                    const LayerEntry& be = layout.entries[entry++];
                    h = g.add(h, g.slice_rows(params, static_cast<int>(be.offset), static_cast<int>(be.length)));
                }
                cur.shape = {static_cast<uint32_t>(l.out)};
                break;
            }
            case LayerKind::Conv2d: {
                detail::ConvGeom geom{static_cast<int>(cur.shape[0]), static_cast<int>(cur.shape[1]),
                                      static_cast<int>(cur.shape[2]), l.kernel};
                const LayerEntry& we = layout.entries[entry++];
                Index w = g.reshape(g.slice_rows(params, static_cast<int>(we.offset), static_cast<int>(we.length)),
                                    l.out, geom.patch_rows());
                Index cols = g.im2col(h, geom);
                Index y = g.matmul(w, cols); // out_c x positions
                if (l.bias) {
                    const LayerEntry& be = layout.entries[entry++];
                    y = g.add_col(y, g.slice_rows(params, static_cast<int>(be.offset), static_cast<int>(be.length)));
                }
                h = g.reshape(y, l.out * geom.out_positions(), 1);
                cur.shape = {static_cast<uint32_t>(l.out), static_cast<uint32_t>(geom.out_h()),
                             static_cast<uint32_t>(geom.out_w())};
                break;
            }
            case LayerKind::Activation:
                h = l.act == Activation::Sigmoid ? g.sigmoid(h) : g.tanh_(h);
                break;
        }
    }
    return h;
}

template <typename S>
typename GraphT<S>::Index cross_entropy(GraphT<S>& g, typename GraphT<S>::Index logits,
                                        typename GraphT<S>::Index label_dist) {
    auto lse = g.logsumexp_cols(logits);            // 1 x 1
    auto mass = g.sum_all(label_dist);              // sum of the distribution (1 for proper labels)
    auto dot = g.sum_all(g.mul(label_dist, logits));
    return g.sub(g.mul(lse, mass), dot);
}

template GraphT<double>::Index forward_logits<double>(GraphT<double>&, const ModelSpec&, const LayerLayout&,
                                                      GraphT<double>::Index, GraphT<double>::Index);
template GraphT<float>::Index forward_logits<float>(GraphT<float>&, const ModelSpec&, const LayerLayout&,
                                                    GraphT<float>::Index, GraphT<float>::Index);
template GraphT<double>::Index cross_entropy<double>(GraphT<double>&, GraphT<double>::Index, GraphT<double>::Index);
template GraphT<float>::Index cross_entropy<float>(GraphT<float>&, GraphT<float>::Index, GraphT<float>::Index);

} // namespace modelgraph

namespace {

Mat<double> column_from(const FlatTensor& t) { return Mat<double>::from_flat(t, static_cast<int>(t.size()), 1); }

Mat<double> onehot_column(int y, int classes) {
    Mat<double> m = Mat<double>::zeros(classes, 1);
    m.d[static_cast<size_t>(y)] = 1.0;
    return m;
}

} // namespace

std::pair<double, GradientVector> loss_and_grad_params(const ModelInstance& model, const FlatTensor& x, int y) {
    if (x.size() != model.spec.input_size()) throw Error(ErrorKind::Input, "loss_and_grad: input size mismatch");
    if (y < 0 || y >= model.spec.classes) throw Error(ErrorKind::Input, "loss_and_grad: label out of range");

    Graph g;
    auto params = g.leaf(column_from(model.params));
    auto xin = g.constant(column_from(x));
    auto label = g.constant(onehot_column(y, model.spec.classes));
    auto logits = modelgraph::forward_logits(g, model.spec, model.layout, params, xin);
    auto loss = modelgraph::cross_entropy(g, logits, label);

    std::array<Graph::Index, 1> wrt{params};
    auto grads = g.backward(loss, wrt);
    FlatTensor gv = g.value(grads[0]).to_flat();
    gv.shape = {static_cast<uint32_t>(gv.size())};
    return {g.value(loss).d[0], GradientVector(std::move(gv), model.layout, GradientRole::Clean)};
}

MatchGradients grad_match_loss_and_input_grad(const ModelInstance& model, const FlatTensor& dummy_x,
                                              const FlatTensor& dummy_y, const GradientVector& target_grad) {
    if (dummy_x.size() != model.spec.input_size())
        throw Error(ErrorKind::Input, "grad_match: dummy input size mismatch");
    if (dummy_y.size() != static_cast<size_t>(model.spec.classes))
        throw Error(ErrorKind::Input, "grad_match: dummy label size mismatch");
    if (!target_grad.layout.same_shape_as(model.layout))
        throw Error(ErrorKind::Layout, "grad_match: target gradient layout mismatch");

    Graph g;
    auto params = g.leaf(column_from(model.params));
    auto xin = g.leaf(column_from(dummy_x));
    auto yin = g.leaf(column_from(dummy_y));
    auto logits = modelgraph::forward_logits(g, model.spec, model.layout, params, xin);
    auto loss = modelgraph::cross_entropy(g, logits, yin);

    std::array<Graph::Index, 1> wrt1{params};
    auto grads = g.backward(loss, wrt1);
    auto target = g.constant(column_from(target_grad.values));
    auto diff = g.sub(grads[0], target);
    auto match = g.sum_all(g.mul(diff, diff));

    std::array<Graph::Index, 2> wrt2{xin, yin};
    auto input_grads = g.backward(match, wrt2);

    MatchGradients out;
    out.loss = g.value(match).d[0];
    out.dx = g.value(input_grads[0]).to_flat();
    out.dx.shape = {static_cast<uint32_t>(out.dx.size())};
    out.dy = g.value(input_grads[1]).to_flat();
    out.dy.shape = {static_cast<uint32_t>(out.dy.size())};
    return out;
}

} // namespace pgla
