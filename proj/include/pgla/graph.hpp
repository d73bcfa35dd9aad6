#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pgla/error.hpp"
#include "pgla/tensor.hpp"

namespace pgla {

/// Dense row-major matrix used inside computation graphs. Column vectors are
/// n x 1; a scalar is 1 x 1.
template <typename S>
struct Mat {
    int rows = 0, cols = 0;
    std::vector<S> d;

    Mat() = default;
    Mat(int r, int c) { set_size(r, c); }

    void set_size(int r, int c) {
        rows = r;
        cols = c;
        d.resize(static_cast<size_t>(r) * c);
    }
    void fill(S v) { std::fill(d.begin(), d.end(), v); }
    size_t size() const { return d.size(); }
    S* data() { return d.data(); }
    const S* data() const { return d.data(); }
    S& at(int i, int j) { return d[static_cast<size_t>(i) * cols + j]; }
    S at(int i, int j) const { return d[static_cast<size_t>(i) * cols + j]; }

    static Mat zeros(int r, int c) {
        Mat m(r, c);
        m.fill(S(0));
        return m;
    }
    static Mat from_flat(const FlatTensor& t, int r, int c) {
        if (t.size() != static_cast<size_t>(r) * c)
            throw Error(ErrorKind::Shape, "Mat::from_flat: size mismatch");
        Mat m(r, c);
        for (size_t i = 0; i < t.size(); ++i) m.d[i] = static_cast<S>(t.data[i]);
        return m;
    }
    FlatTensor to_flat() const {
        std::vector<float> out(size());
        for (size_t i = 0; i < size(); ++i) out[i] = static_cast<float>(d[i]);
        return FlatTensor({static_cast<uint32_t>(rows), static_cast<uint32_t>(cols)}, std::move(out));
    }
};

namespace detail {

// C += A * B with C pre-zeroed by the caller. ikj order; the inner j loop is
// unit-stride on both C and B so it vectorizes without reassociation flags.
template <typename S>
void matmul_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A^T * B where A is m x k (so C is k x n). Avoids materializing A^T.
template <typename S>
void matmul_ta_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        const S* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            S* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T where B is n x k and A is m x k (so C is m x n).
template <typename S>
void matmul_bt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<size_t>(j) * k;
            S acc0 = 0, acc1 = 0;
            int p = 0;
            for (; p + 1 < k; p += 2) {
                acc0 += arow[p] * brow[p];
                acc1 += arow[p + 1] * brow[p + 1];
            }
            if (p < k) acc0 += arow[p] * brow[p];
            crow[j] += acc0 + acc1;
        }
    }
}

struct ConvGeom {
    int in_c = 0, in_h = 0, in_w = 0, k = 0;
    int out_h() const { return in_h - k + 1; }
    int out_w() const { return in_w - k + 1; }
    int patch_rows() const { return in_c * k * k; }
    int out_positions() const { return out_h() * out_w(); }
};

} // namespace detail

/// Dynamic computation graph with reverse-mode differentiation. backward()
/// emits the adjoint computation as new graph nodes, so a gradient is itself
/// differentiable: calling backward() on a scalar built from gradient nodes
/// yields second-order derivatives (gradient-of-gradient).
///
/// Values are evaluated eagerly as nodes are added. The node arena supports
/// truncate(): optimization loops keep parameter leaves below a checkpoint
/// index and rebuild the step subgraph in place, which reuses allocations.
///
/// Node creation can grow the arena, so op kernels never hold references
/// across begin_node(); inputs are re-fetched by index afterwards.
template <typename S>
class GraphT {
public:
    using Index = int32_t;

    enum class Op : uint8_t {
        Leaf, Constant,
        Add, Sub, Mul, MatMul, MatMulTA, MatMulBT, Transpose, Reshape,
        Scale, Affine, AddCol,
        Sigmoid, Tanh, Exp,
        SumAll, SumCols, SumRows, TileCols, TileRows, BcastAll,
        LogSumExpCols,
        SliceRows, PadRows,
        Im2Col, Col2Im,
    };

    Index leaf(Mat<S> v) { return emplace(Op::Leaf, -1, -1, std::move(v), true); }
    Index constant(Mat<S> v) { return emplace(Op::Constant, -1, -1, std::move(v), false); }

    Index add(Index a, Index b) { return binary_same_shape(Op::Add, a, b); }
    Index sub(Index a, Index b) { return binary_same_shape(Op::Sub, a, b); }
    Index mul(Index a, Index b) { return binary_same_shape(Op::Mul, a, b); }

    Index matmul(Index a, Index b) {
        auto [ar, ac] = dims(a, "matmul lhs");
        auto [br, bc] = dims(b, "matmul rhs");
        if (ac != br) throw Error(ErrorKind::Shape, "matmul: inner dimensions differ");
        Index out = begin_node(Op::MatMul, a, b, ar, bc);
        Mat<S>& c = node(out).val;
        c.fill(S(0));
        detail::matmul_acc(node(a).val.data(), node(b).val.data(), c.data(), ar, ac, bc);
        return out;
    }

    /// a^T * b without materializing the transpose.
    Index matmul_ta(Index a, Index b) {
        auto [ar, ac] = dims(a, "matmul_ta lhs");
        auto [br, bc] = dims(b, "matmul_ta rhs");
        if (ar != br) throw Error(ErrorKind::Shape, "matmul_ta: inner dimensions differ");
        Index out = begin_node(Op::MatMulTA, a, b, ac, bc);
        Mat<S>& c = node(out).val;
        c.fill(S(0));
        detail::matmul_ta_acc(node(a).val.data(), node(b).val.data(), c.data(), ar, ac, bc);
        return out;
    }

    /// a * b^T without materializing the transpose.
    Index matmul_bt(Index a, Index b) {
        auto [ar, ac] = dims(a, "matmul_bt lhs");
        auto [br, bc] = dims(b, "matmul_bt rhs");
        if (ac != bc) throw Error(ErrorKind::Shape, "matmul_bt: inner dimensions differ");
        Index out = begin_node(Op::MatMulBT, a, b, ar, br);
        Mat<S>& c = node(out).val;
        c.fill(S(0));
        detail::matmul_bt_acc(node(a).val.data(), node(b).val.data(), c.data(), ar, ac, br);
        return out;
    }

    Index transpose(Index a) {
        auto [r, c] = dims(a, "transpose");
        Index out = begin_node(Op::Transpose, a, -1, c, r);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) o.at(j, i) = v.at(i, j);
        return out;
    }

    Index reshape(Index a, int r, int c) {
        auto [ar, ac] = dims(a, "reshape");
        if (static_cast<size_t>(r) * c != static_cast<size_t>(ar) * ac)
            throw Error(ErrorKind::Shape, "reshape: element count differs");
        Index out = begin_node(Op::Reshape, a, -1, r, c);
        node(out).val.d = node(a).val.d;
        return out;
    }

    Index scale(Index a, S s) { return affine(a, s, S(0)); }

    Index affine(Index a, S mulc, S addc) {
        auto [r, c] = dims(a, "affine");
        Index out = begin_node(Op::Affine, a, -1, r, c);
        node(out).s0 = mulc;
        node(out).s1 = addc;
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (size_t i = 0; i < v.size(); ++i) o.d[i] = mulc * v.d[i] + addc;
        return out;
    }

    Index add_col(Index a, Index v) {
        auto [r, c] = dims(a, "add_col input");
        auto [vr, vc] = dims(v, "add_col bias");
        if (vc != 1 || vr != r) throw Error(ErrorKind::Shape, "add_col: bias must be rows x 1");
        Index out = begin_node(Op::AddCol, a, v, r, c);
        const Mat<S>& va = node(a).val;
        const Mat<S>& vv = node(v).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) o.at(i, j) = va.at(i, j) + vv.d[static_cast<size_t>(i)];
        return out;
    }

    Index sigmoid(Index a) { return unary_elem(Op::Sigmoid, a, [](S x) { return S(1) / (S(1) + std::exp(-x)); }); }
    Index tanh_(Index a) { return unary_elem(Op::Tanh, a, [](S x) { return std::tanh(x); }); }
    Index exp_(Index a) { return unary_elem(Op::Exp, a, [](S x) { return std::exp(x); }); }

    Index sum_all(Index a) {
        dims(a, "sum_all");
        Index out = begin_node(Op::SumAll, a, -1, 1, 1);
        const Mat<S>& v = node(a).val;
        S s = 0;
        for (S x : v.d) s += x;
        node(out).val.d[0] = s;
        return out;
    }

    Index sum_cols(Index a) {
        auto [r, c] = dims(a, "sum_cols");
        Index out = begin_node(Op::SumCols, a, -1, r, 1);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < r; ++i) {
            S s = 0;
            for (int j = 0; j < c; ++j) s += v.at(i, j);
            o.d[static_cast<size_t>(i)] = s;
        }
        return out;
    }

    Index sum_rows(Index a) {
        auto [r, c] = dims(a, "sum_rows");
        Index out = begin_node(Op::SumRows, a, -1, 1, c);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int j = 0; j < c; ++j) o.d[static_cast<size_t>(j)] = S(0);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) o.d[static_cast<size_t>(j)] += v.at(i, j);
        return out;
    }

    Index tile_cols(Index a, int n) {
        auto [r, c] = dims(a, "tile_cols");
        if (c != 1) throw Error(ErrorKind::Shape, "tile_cols: input must be rows x 1");
        Index out = begin_node(Op::TileCols, a, -1, r, n);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < n; ++j) o.at(i, j) = v.d[static_cast<size_t>(i)];
        return out;
    }

    Index tile_rows(Index a, int m) {
        auto [r, c] = dims(a, "tile_rows");
        if (r != 1) throw Error(ErrorKind::Shape, "tile_rows: input must be 1 x cols");
        Index out = begin_node(Op::TileRows, a, -1, m, c);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) o.at(i, j) = v.d[static_cast<size_t>(j)];
        return out;
    }

    Index bcast_all(Index a, int r, int c) {
        auto [ar, ac] = dims(a, "bcast_all");
        if (ar * ac != 1) throw Error(ErrorKind::Shape, "bcast_all: input must be scalar");
        Index out = begin_node(Op::BcastAll, a, -1, r, c);
        node(out).val.fill(node(a).val.d[0]);
        return out;
    }

    /// Per-column log(sum(exp())), max-shifted for stability.
    Index logsumexp_cols(Index a) {
        auto [r, c] = dims(a, "logsumexp_cols");
        Index out = begin_node(Op::LogSumExpCols, a, -1, 1, c);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int j = 0; j < c; ++j) {
            S mx = v.at(0, j);
            for (int i = 1; i < r; ++i) mx = std::max(mx, v.at(i, j));
            S s = 0;
            for (int i = 0; i < r; ++i) s += std::exp(v.at(i, j) - mx);
            o.d[static_cast<size_t>(j)] = mx + std::log(s);
        }
        return out;
    }

    Index slice_rows(Index a, int r0, int len) {
        auto [r, c] = dims(a, "slice_rows");
        if (r0 < 0 || len < 1 || r0 + len > r) throw Error(ErrorKind::Shape, "slice_rows: range out of bounds");
        Index out = begin_node(Op::SliceRows, a, -1, len, c);
        node(out).i0 = r0;
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (int i = 0; i < len; ++i)
            for (int j = 0; j < c; ++j) o.at(i, j) = v.at(r0 + i, j);
        return out;
    }

    Index pad_rows(Index a, int total_rows, int r0) {
        auto [r, c] = dims(a, "pad_rows");
        if (r0 < 0 || r0 + r > total_rows) throw Error(ErrorKind::Shape, "pad_rows: range out of bounds");
        Index out = begin_node(Op::PadRows, a, -1, total_rows, c);
        node(out).i0 = r0;
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        o.fill(S(0));
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) o.at(r0 + i, j) = v.at(i, j);
        return out;
    }

    /// Rows stacked: [a; b].
    Index concat_rows(Index a, Index b) {
        auto [ar, ac] = dims(a, "concat_rows");
        auto [br, bc] = dims(b, "concat_rows");
        if (ac != bc) throw Error(ErrorKind::Shape, "concat_rows: column counts differ");
        int total = ar + br;
        return add(pad_rows(a, total, 0), pad_rows(b, total, ar));
    }

    /// x is a flattened C x H x W image (column vector); output has one column
    /// per sliding-window position, rows are the unrolled patch.
    Index im2col(Index a, detail::ConvGeom geom) {
        auto [r, c] = dims(a, "im2col");
        if (c != 1 || r != geom.in_c * geom.in_h * geom.in_w)
            throw Error(ErrorKind::Shape, "im2col: input does not match geometry");
        Index out = begin_node(Op::Im2Col, a, -1, geom.patch_rows(), geom.out_positions());
        node(out).i0 = store_geom(geom);
        im2col_kernel(node(a).val, node(out).val, geom);
        return out;
    }

    Index col2im(Index a, detail::ConvGeom geom) {
        auto [r, c] = dims(a, "col2im");
        if (r != geom.patch_rows() || c != geom.out_positions())
            throw Error(ErrorKind::Shape, "col2im: input does not match geometry");
        Index out = begin_node(Op::Col2Im, a, -1, geom.in_c * geom.in_h * geom.in_w, 1);
        node(out).i0 = store_geom(geom);
        col2im_kernel(node(a).val, node(out).val, geom);
        return out;
    }

    const Mat<S>& value(Index i) const { return node(i).val; }

    /// Overwrite a leaf in place (optimizer updates). Shape must match.
    void set_leaf(Index i, const Mat<S>& v) {
        Node& n = node(i);
        if (n.op != Op::Leaf && n.op != Op::Constant) throw Error(ErrorKind::Usage, "set_leaf: node is not a leaf");
        if (n.val.rows != v.rows || n.val.cols != v.cols) throw Error(ErrorKind::Shape, "set_leaf: shape differs");
        n.val.d = v.d;
    }
    Mat<S>& leaf_value(Index i) {
        Node& n = node(i);
        if (n.op != Op::Leaf && n.op != Op::Constant)
            throw Error(ErrorKind::Usage, "leaf_value: node is not a leaf");
        return n.val;
    }

    Index size() const { return size_; }
    void truncate(Index n) {
        if (n < 0 || n > size_) throw Error(ErrorKind::Usage, "truncate: bad checkpoint");
        size_ = n;
    }

    /// Reverse-mode sweep from a scalar node. Returns one adjoint node per
    /// requested input (a zero constant if the output does not depend on it).
    /// The adjoints are ordinary graph nodes and can be differentiated again.
    std::vector<Index> backward(Index out, std::span<const Index> wrt) {
        if (node(out).val.size() != 1) throw Error(ErrorKind::Usage, "backward: output must be scalar");
        if (!node(out).requires_grad) throw Error(ErrorKind::Usage, "backward: output does not depend on any leaf");

        std::vector<Index> adj(static_cast<size_t>(out) + 1, -1);
        adj[static_cast<size_t>(out)] = constant(Mat<S>(1, 1));
        node(adj[static_cast<size_t>(out)]).val.d[0] = S(1);

        for (Index i = out; i >= 0; --i) {
            if (adj[static_cast<size_t>(i)] < 0 || !node(i).requires_grad) continue;
            // copy fields: emitting adjoint nodes may reallocate the arena
            const Op op = node(i).op;
            const Index a = node(i).a, b = node(i).b;
            const int i0 = node(i).i0;
            const S s0 = node(i).s0;
            const Index g = adj[static_cast<size_t>(i)];
            auto accum = [&](Index target, Index contrib) {
                if (target < 0 || !node(target).requires_grad) return;
                auto& slot = adj[static_cast<size_t>(target)];
                slot = slot < 0 ? contrib : add(slot, contrib);
            };
            switch (op) {
                case Op::Leaf:
                case Op::Constant:
                    break;
                case Op::Add:
                    accum(a, g);
                    accum(b, g);
                    break;
                case Op::Sub:
                    accum(a, g);
                    accum(b, scale(g, S(-1)));
                    break;
                case Op::Mul:
                    accum(a, mul(g, b));
                    accum(b, mul(g, a));
                    break;
                case Op::MatMul:
                    accum(a, matmul_bt(g, b));
                    accum(b, matmul_ta(a, g));
                    break;
                case Op::MatMulTA: // c = a^T b: da = b g^T, db = a g
                    accum(a, matmul_bt(b, g));
                    accum(b, matmul(a, g));
                    break;
                case Op::MatMulBT: // c = a b^T: da = g b, db = g^T a
                    accum(a, matmul(g, b));
                    accum(b, matmul_ta(g, a));
                    break;
                case Op::Transpose:
                    accum(a, transpose(g));
                    break;
                case Op::Reshape:
                    accum(a, reshape(g, node(a).val.rows, node(a).val.cols));
                    break;
                case Op::Affine:
                    accum(a, scale(g, s0));
                    break;
                case Op::AddCol:
                    accum(a, g);
                    accum(b, sum_cols(g));
                    break;
                case Op::Sigmoid:
                    // y' = y (1 - y), written against the forward output node
                    accum(a, mul(g, mul(i, affine(i, S(-1), S(1)))));
                    break;
                case Op::Tanh:
                    accum(a, mul(g, affine(mul(i, i), S(-1), S(1))));
                    break;
                case Op::Exp:
                    accum(a, mul(g, i));
                    break;
                case Op::SumAll:
                    accum(a, bcast_all(g, node(a).val.rows, node(a).val.cols));
                    break;
                case Op::SumCols:
                    accum(a, tile_cols(g, node(a).val.cols));
                    break;
                case Op::SumRows:
                    accum(a, tile_rows(g, node(a).val.rows));
                    break;
                case Op::TileCols:
                    accum(a, sum_cols(g));
                    break;
                case Op::TileRows:
                    accum(a, sum_rows(g));
                    break;
                case Op::BcastAll:
                    accum(a, sum_all(g));
                    break;
                case Op::LogSumExpCols:
                    // d lse / dA = softmax per column = exp(A - lse)
                    accum(a, mul(tile_rows(g, node(a).val.rows),
                                 exp_(sub(a, tile_rows(i, node(a).val.rows)))));
                    break;
                case Op::SliceRows:
                    accum(a, pad_rows(g, node(a).val.rows, i0));
                    break;
                case Op::PadRows:
                    accum(a, slice_rows(g, i0, node(a).val.rows));
                    break;
                case Op::Im2Col:
                    accum(a, col2im(g, geoms_[static_cast<size_t>(i0)]));
                    break;
                case Op::Col2Im:
                    accum(a, im2col(g, geoms_[static_cast<size_t>(i0)]));
                    break;
            }
        }

        std::vector<Index> out_adj;
        out_adj.reserve(wrt.size());
        for (Index w : wrt) {
            if (w <= out && adj[static_cast<size_t>(w)] >= 0) {
                out_adj.push_back(adj[static_cast<size_t>(w)]);
            } else {
                out_adj.push_back(constant(Mat<S>::zeros(node(w).val.rows, node(w).val.cols)));
            }
        }
        return out_adj;
    }

private:
    struct Node {
        Op op = Op::Constant;
        Index a = -1, b = -1;
        int i0 = 0;
        S s0 = 0, s1 = 0;
        bool requires_grad = false;
        Mat<S> val;
    };

    std::vector<Node> nodes_;
    std::vector<detail::ConvGeom> geoms_;
    Index size_ = 0;

    Node& node(Index i) { return nodes_[static_cast<size_t>(i)]; }
    const Node& node(Index i) const { return nodes_[static_cast<size_t>(i)]; }

    /// Bounds-check an input and return its dimensions by value (safe to use
    /// across later node allocations, unlike references into the arena).
    std::pair<int, int> dims(Index i, const char* what) const {
        if (i < 0 || i >= size_) throw Error(ErrorKind::Usage, std::string(what) + ": bad node index");
        return {node(i).val.rows, node(i).val.cols};
    }

    int store_geom(const detail::ConvGeom& g) {
        for (size_t i = 0; i < geoms_.size(); ++i) {
            const auto& e = geoms_[i];
            if (e.in_c == g.in_c && e.in_h == g.in_h && e.in_w == g.in_w && e.k == g.k) return static_cast<int>(i);
        }
        geoms_.push_back(g);
        return static_cast<int>(geoms_.size() - 1);
    }

    Index alloc_slot() {
        if (size_ == static_cast<Index>(nodes_.size())) nodes_.emplace_back();
        return size_++;
    }

    Index emplace(Op op, Index a, Index b, Mat<S> v, bool rg) {
        Index idx = alloc_slot();
        Node& n = node(idx);
        n.op = op;
        n.a = a;
        n.b = b;
        n.i0 = 0;
        n.s0 = n.s1 = S(0);
        n.requires_grad = rg;
        n.val = std::move(v);
        return idx;
    }

    // Allocates the output slot and sizes its value buffer. May reallocate the
    // arena: callers must re-fetch input references afterwards.
    Index begin_node(Op op, Index a, Index b, int r, int c) {
        bool rg = (a >= 0 && node(a).requires_grad) || (b >= 0 && node(b).requires_grad);
        Index idx = alloc_slot();
        Node& n = node(idx);
        n.op = op;
        n.a = a;
        n.b = b;
        n.i0 = 0;
        n.s0 = n.s1 = S(0);
        n.requires_grad = rg;
        n.val.set_size(r, c);
        return idx;
    }

    Index binary_same_shape(Op op, Index a, Index b) {
        auto [ar, ac] = dims(a, "binary lhs");
        auto [br, bc] = dims(b, "binary rhs");
        if (ar != br || ac != bc) throw Error(ErrorKind::Shape, "elementwise op: shapes differ");
        Index out = begin_node(op, a, b, ar, ac);
        const S* x = node(a).val.data();
        const S* y = node(b).val.data();
        S* z = node(out).val.data();
        const size_t n = static_cast<size_t>(ar) * ac;
        switch (op) {
            case Op::Add:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
                break;
            case Op::Sub:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
                break;
            case Op::Mul:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
                break;
            default:
                throw Error(ErrorKind::Usage, "binary_same_shape: not a binary op");
        }
        return out;
    }

    template <typename F>
    Index unary_elem(Op op, Index a, F f) {
        auto [r, c] = dims(a, "unary input");
        Index out = begin_node(op, a, -1, r, c);
        const Mat<S>& v = node(a).val;
        Mat<S>& o = node(out).val;
        for (size_t i = 0; i < v.size(); ++i) o.d[i] = f(v.d[i]);
        return out;
    }

    static void im2col_kernel(const Mat<S>& x, Mat<S>& out, const detail::ConvGeom& g) {
        const int oh = g.out_h(), ow = g.out_w();
        for (int c = 0; c < g.in_c; ++c)
            for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx) {
                    const int row = (c * g.k + ky) * g.k + kx;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const int src = (c * g.in_h + oy + ky) * g.in_w + ox + kx;
                            out.at(row, oy * ow + ox) = x.d[static_cast<size_t>(src)];
                        }
                }
    }

    static void col2im_kernel(const Mat<S>& cols, Mat<S>& out, const detail::ConvGeom& g) {
        out.fill(S(0));
        const int oh = g.out_h(), ow = g.out_w();
        for (int c = 0; c < g.in_c; ++c)
            for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx) {
                    const int row = (c * g.k + ky) * g.k + kx;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const int dst = (c * g.in_h + oy + ky) * g.in_w + ox + kx;
                            out.d[static_cast<size_t>(dst)] += cols.at(row, oy * ow + ox);
                        }
                }
    }
};

using Graph = GraphT<double>;
using GraphF = GraphT<float>;

} // namespace pgla
