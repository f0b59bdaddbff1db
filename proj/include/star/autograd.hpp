#pragma once

// Tape-based reverse-mode differentiation over Tensor<S>.
//
// Nodes are appended in evaluation order, so node ids are already a
// topological order and backward is a single reverse sweep.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/frequency.hpp"
#include "star/ops.hpp"
#include "star/tensor.hpp"

namespace star {

/// Handle to a node inside a Graph.
struct Var {
    std::size_t id = 0;
};

enum class OpKind {
    constant,
    parameter,
    add,
    sub,
    scale,
    mul,
    mul_const,
    gate_mul,
    add_channel_bias,
    mul_channel,
    conv3x3,
    channel_pool,
    concat_channels,
    sigmoid,
    silu,
    abs,
    square,
    mean,
    sum,
    permute,
    reshape,
    linear,
    attention,
    dft2,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::constant: return "constant";
        case OpKind::parameter: return "parameter";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::scale: return "scale";
        case OpKind::mul: return "mul";
        case OpKind::mul_const: return "mul_const";
        case OpKind::gate_mul: return "gate_mul";
        case OpKind::add_channel_bias: return "add_channel_bias";
        case OpKind::mul_channel: return "mul_channel";
        case OpKind::conv3x3: return "conv3x3";
        case OpKind::channel_pool: return "channel_pool";
        case OpKind::concat_channels: return "concat_channels";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::silu: return "silu";
        case OpKind::abs: return "abs";
        case OpKind::square: return "square";
        case OpKind::mean: return "mean";
        case OpKind::sum: return "sum";
        case OpKind::permute: return "permute";
        case OpKind::reshape: return "reshape";
        case OpKind::linear: return "linear";
        case OpKind::attention: return "attention";
        case OpKind::dft2: return "dft2";
    }
    return "?";
}

template <class S>
class Graph {
public:
    struct Node {
        OpKind op;
        std::vector<std::size_t> inputs;
        Tensor<S> value;
        double scalar = 0.0;            // scale factor
        std::vector<std::size_t> ints;  // permutation axes, argmax, pool kind
        std::vector<S> cache;           // attention probabilities
        std::size_t param_offset = 0;
    };

    Var constant(Tensor<S> t) { return push(OpKind::constant, {}, std::move(t)); }

    /// Leaf whose gradient lands at [offset, offset + numel) of the flat gradient.
    Var parameter(Tensor<S> t, std::size_t offset) {
        if (!param_offsets_.insert(offset).second)
            throw std::invalid_argument("parameter offset " + std::to_string(offset) + " registered twice");
        param_extent_ = std::max(param_extent_, offset + t.size());
        Var v = push(OpKind::parameter, {}, std::move(t));
        nodes_[v.id].param_offset = offset;
        return v;
    }

    const Tensor<S>& value(Var v) const { return nodes_.at(v.id).value; }
    S scalar(Var v) const {
        const auto& t = value(v);
        if (t.size() != 1) throw ShapeError("scalar(): node holds " + shape_str(t.shape()));
        return t[0];
    }
    std::size_t size() const { return nodes_.size(); }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    std::size_t parameter_extent() const { return param_extent_; }

    // ----- elementwise -----

    Var add(Var a, Var b) {
        require_same_shape(value(a).shape(), value(b).shape(), "add");
        auto out = value(a);
        const auto& y = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
        return push(OpKind::add, {a.id, b.id}, std::move(out));
    }

    Var sub(Var a, Var b) {
        require_same_shape(value(a).shape(), value(b).shape(), "sub");
        auto out = value(a);
        const auto& y = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
        return push(OpKind::sub, {a.id, b.id}, std::move(out));
    }

    Var scale(Var a, double s) {
        auto out = value(a);
        for (auto& v : out.vec()) v = static_cast<S>(static_cast<double>(v) * s);
        Var r = push(OpKind::scale, {a.id}, std::move(out));
        nodes_[r.id].scalar = s;
        return r;
    }

    Var mul(Var a, Var b) {
        require_same_shape(value(a).shape(), value(b).shape(), "mul");
        auto out = value(a);
        const auto& y = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
        return push(OpKind::mul, {a.id, b.id}, std::move(out));
    }

    /// Multiply by a fixed tensor (no gradient flows into it).
    Var mul_const(Var a, const Tensor<S>& c) {
        require_same_shape(value(a).shape(), c.shape(), "mul_const");
        Var cv = constant(c);
        auto out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
        return push(OpKind::mul_const, {a.id, cv.id}, std::move(out));
    }

    Var sigmoid(Var a) { return push(OpKind::sigmoid, {a.id}, kernels::sigmoid(value(a))); }

    Var silu(Var a) {
        auto out = value(a);
        for (auto& v : out.vec()) v = v * kernels::sigmoid_scalar(v);
        return push(OpKind::silu, {a.id}, std::move(out));
    }

    Var abs(Var a) {
        auto out = value(a);
        for (auto& v : out.vec()) v = std::abs(v);
        return push(OpKind::abs, {a.id}, std::move(out));
    }

    Var square(Var a) {
        auto out = value(a);
        for (auto& v : out.vec()) v = v * v;
        return push(OpKind::square, {a.id}, std::move(out));
    }

    // ----- reductions -----

    Var sum(Var a) {
        double acc = 0.0;
        for (auto v : value(a).vec()) acc += static_cast<double>(v);
        return push(OpKind::sum, {a.id}, Tensor<S>({1}, static_cast<S>(acc)));
    }

    Var mean(Var a) {
        double acc = 0.0;
        for (auto v : value(a).vec()) acc += static_cast<double>(v);
        return push(OpKind::mean, {a.id}, Tensor<S>({1}, static_cast<S>(acc / static_cast<double>(value(a).size()))));
    }

    // ----- layout -----

    Var reshape(Var a, Shape s) { return push(OpKind::reshape, {a.id}, value(a).reshaped(std::move(s))); }

    /// out.shape[i] = in.shape[axes[i]].
    Var permute(Var a, std::vector<std::size_t> axes) {
        const auto& in = value(a);
        if (axes.size() != in.rank()) throw ShapeError("permute: axes rank mismatch");
        Shape os(axes.size());
        for (std::size_t i = 0; i < axes.size(); ++i) os[i] = in.dim(axes.at(i));
        Tensor<S> out(os);
        for_each_permuted(in.shape(), axes, [&](std::size_t o, std::size_t i) { out[o] = in[i]; });
        Var r = push(OpKind::permute, {a.id}, std::move(out));
        nodes_[r.id].ints = std::move(axes);
        return r;
    }

    /// [N,C1,H,W] ++ [N,C2,H,W] along channels.
    Var concat_channels(Var a, Var b) {
        const auto& x = value(a);
        const auto& y = value(b);
        require_rank(x.shape(), 4, "concat_channels");
        require_rank(y.shape(), 4, "concat_channels");
        if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3))
            throw ShapeError("concat_channels: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
        const std::size_t N = x.dim(0), C1 = x.dim(1), C2 = y.dim(1), P = x.dim(2) * x.dim(3);
        Tensor<S> out({N, C1 + C2, x.dim(2), x.dim(3)});
        for (std::size_t n = 0; n < N; ++n) {
            std::copy_n(&x[n * C1 * P], C1 * P, &out[n * (C1 + C2) * P]);
            std::copy_n(&y[n * C2 * P], C2 * P, &out[n * (C1 + C2) * P + C1 * P]);
        }
        return push(OpKind::concat_channels, {a.id, b.id}, std::move(out));
    }

    // ----- network ops -----

    Var conv3x3(Var x, Var k, Var b) {
        return push(OpKind::conv3x3, {x.id, k.id, b.id}, kernels::conv3x3(value(x), value(k), value(b)));
    }

    Var channel_pool(Var x, PoolKind kind) {
        Var r = push(OpKind::channel_pool, {x.id}, kernels::channel_pool(value(x), kind));
        nodes_[r.id].ints = {kind == PoolKind::max ? 1u : 0u};
        return r;
    }

    /// gate [N,1,H,W] broadcast over the channels of x [N,C,H,W].
    Var gate_mul(Var gate, Var x) {
        const auto& g = value(gate);
        const auto& v = value(x);
        require_rank(v.shape(), 4, "gate_mul");
        if (g.shape() != Shape{v.dim(0), 1, v.dim(2), v.dim(3)})
            throw ShapeError("gate_mul: gate " + shape_str(g.shape()) + " vs features " + shape_str(v.shape()));
        const std::size_t N = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
        Tensor<S> out(v.shape());
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) out[(n * C + c) * P + p] = g[n * P + p] * v[(n * C + c) * P + p];
        return push(OpKind::gate_mul, {gate.id, x.id}, std::move(out));
    }

    /// x [N,C,H,W] + b[C].
    Var add_channel_bias(Var x, Var b) {
        const auto& v = value(x);
        const auto& bias = value(b);
        require_rank(v.shape(), 4, "add_channel_bias");
        if (bias.shape() != Shape{v.dim(1)})
            throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(v.shape()));
        const std::size_t N = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
        Tensor<S> out = v;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) out[(n * C + c) * P + p] += bias[c];
        return push(OpKind::add_channel_bias, {x.id, b.id}, std::move(out));
    }

    /// x [N,C,H,W] * s[C].
    Var mul_channel(Var x, Var s) {
        const auto& v = value(x);
        const auto& sc = value(s);
        require_rank(v.shape(), 4, "mul_channel");
        if (sc.shape() != Shape{v.dim(1)})
            throw ShapeError("mul_channel: scale " + shape_str(sc.shape()) + " vs " + shape_str(v.shape()));
        const std::size_t N = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
        Tensor<S> out = v;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) out[(n * C + c) * P + p] *= sc[c];
        return push(OpKind::mul_channel, {x.id, s.id}, std::move(out));
    }

    /// Row-wise affine map: x [..., D] * W [D, O] + b [O].
    Var linear(Var x, Var w, Var b) {
        const auto& v = value(x);
        const auto& wt = value(w);
        const auto& bias = value(b);
        require_rank(wt.shape(), 2, "linear weight");
        const std::size_t D = wt.dim(0), O = wt.dim(1);
        if (v.shape().back() != D || bias.shape() != Shape{O})
            throw ShapeError("linear: input " + shape_str(v.shape()) + ", weight " + shape_str(wt.shape()) +
                             ", bias " + shape_str(bias.shape()));
        const std::size_t rows = v.size() / D;
        Shape os = v.shape();
        os.back() = O;
        Tensor<S> out(os);
        std::vector<double> acc(O);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < O; ++o) acc[o] = static_cast<double>(bias[o]);
            for (std::size_t d = 0; d < D; ++d) {
                const double xv = static_cast<double>(v[r * D + d]);
                if (xv == 0.0) continue;
                for (std::size_t o = 0; o < O; ++o) acc[o] += xv * static_cast<double>(wt[d * O + o]);
            }
            for (std::size_t o = 0; o < O; ++o) out[r * O + o] = static_cast<S>(acc[o]);
        }
        return push(OpKind::linear, {x.id, w.id, b.id}, std::move(out));
    }

    /// Scaled dot-product attention over q, k, v of shape [B, N, D].
    Var attention(Var q, Var k, Var v) {
        const auto& Q = value(q);
        const auto& K = value(k);
        const auto& V = value(v);
        require_rank(Q.shape(), 3, "attention");
        require_same_shape(Q.shape(), K.shape(), "attention q/k");
        require_same_shape(Q.shape(), V.shape(), "attention q/v");
        const std::size_t B = Q.dim(0), N = Q.dim(1), D = Q.dim(2);
        const double inv = 1.0 / std::sqrt(static_cast<double>(D));
        std::vector<S> probs(B * N * N);
        Tensor<S> out(Q.shape());
        std::vector<double> row(N);
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t i = 0; i < N; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < N; ++j) {
                    double s = 0.0;
                    for (std::size_t d = 0; d < D; ++d)
                        s += static_cast<double>(Q[(bb * N + i) * D + d]) * static_cast<double>(K[(bb * N + j) * D + d]);
                    row[j] = s * inv;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                for (std::size_t j = 0; j < N; ++j) {
                    row[j] /= z;
                    probs[(bb * N + i) * N + j] = static_cast<S>(row[j]);
                }
                for (std::size_t d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < N; ++j) acc += row[j] * static_cast<double>(V[(bb * N + j) * D + d]);
                    out[(bb * N + i) * D + d] = static_cast<S>(acc);
                }
            }
        Var r = push(OpKind::attention, {q.id, k.id, v.id}, std::move(out));
        nodes_[r.id].cache = std::move(probs);
        return r;
    }

    /// Unnormalized 2-D DFT of [T,C,H,W]; result [T,C,H,W,2] holds (re, im).
    Var dft2(Var x) {
        const auto& v = value(x);
        const Spectrum spec = star::dft2(v);
        Shape os = v.shape();
        os.push_back(2);
        Tensor<S> out(os);
        for (std::size_t i = 0; i < spec.bins.size(); ++i) {
            out[2 * i] = static_cast<S>(spec.bins[i].real());
            out[2 * i + 1] = static_cast<S>(spec.bins[i].imag());
        }
        return push(OpKind::dft2, {x.id}, std::move(out));
    }

    /// d loss / d parameters as a flat vector of length `extent`
    /// (defaults to the span covered by registered parameters).
    std::vector<S> backward(Var loss, std::size_t extent = 0) const {
        if (value(loss).size() != 1)
            throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
        if (extent == 0) extent = param_extent_;
        std::vector<S> flat(extent, S{0});
        std::vector<Tensor<S>> grads(nodes_.size());
        grads[loss.id] = Tensor<S>({1}, S{1});
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            if (grads[id].empty()) continue;
            backprop_node(id, grads);
            const auto& n = nodes_[id];
            if (n.op == OpKind::parameter) {
                if (n.param_offset + n.value.size() > extent)
                    throw std::out_of_range("backward: parameter slice exceeds gradient extent");
                for (std::size_t i = 0; i < n.value.size(); ++i) flat[n.param_offset + i] += grads[id][i];
            }
            if (n.op != OpKind::parameter) grads[id] = Tensor<S>();
        }
        return flat;
    }

private:
    Var push(OpKind op, std::vector<std::size_t> inputs, Tensor<S> value) {
        if (op != OpKind::constant && op != OpKind::parameter && !value.all_finite())
            throw NonFiniteError(std::string("non-finite value produced by ") + op_name(op));
        nodes_.push_back(Node{op, std::move(inputs), std::move(value)});
        return Var{nodes_.size() - 1};
    }

    // Calls fn(out_offset, in_offset) for every element of the permuted layout.
    template <class Fn>
    static void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& axes, Fn&& fn) {
        const std::size_t r = axes.size();
        std::vector<std::size_t> in_strides(r, 1);
        for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        Shape os(r);
        for (std::size_t i = 0; i < r; ++i) os[i] = in_shape[axes[i]];
        std::vector<std::size_t> idx(r, 0);
        const std::size_t total = shape_numel(os);
        for (std::size_t o = 0; o < total; ++o) {
            std::size_t off = 0;
            for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
            fn(o, off);
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < os[i]) break;
                idx[i] = 0;
            }
        }
    }

    void accumulate(std::vector<Tensor<S>>& grads, std::size_t id, const Tensor<S>& g) const {
        if (grads[id].empty()) {
            grads[id] = g;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) grads[id][i] += g[i];
    }

    Tensor<S>& grad_slot(std::vector<Tensor<S>>& grads, std::size_t id) const {
        if (grads[id].empty()) grads[id] = Tensor<S>(nodes_[id].value.shape());
        return grads[id];
    }

    void backprop_node(std::size_t id, std::vector<Tensor<S>>& grads) const {
        const Node& n = nodes_[id];
        const Tensor<S> g = grads[id];
        const auto& in = n.inputs;
        switch (n.op) {
            case OpKind::constant:
            case OpKind::parameter:
                return;
            case OpKind::add:
                accumulate(grads, in[0], g);
                accumulate(grads, in[1], g);
                return;
            case OpKind::sub: {
                accumulate(grads, in[0], g);
                auto& gb = grad_slot(grads, in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                return;
            }
            case OpKind::scale: {
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<S>(static_cast<double>(g[i]) * n.scalar);
                return;
            }
            case OpKind::mul: {
                const auto& a = nodes_[in[0]].value;
                const auto& b = nodes_[in[1]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                auto& gb = grad_slot(grads, in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                return;
            }
            case OpKind::mul_const: {
                const auto& c = nodes_[in[1]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
                return;
            }
            case OpKind::sigmoid: {
                const auto& x = nodes_[in[0]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (std::abs(static_cast<double>(x[i])) > kernels::kSigmoidClamp) continue;
                    const S s = n.value[i];
                    ga[i] += g[i] * s * (S{1} - s);
                }
                return;
            }
            case OpKind::silu: {
                const auto& x = nodes_[in[0]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const S s = kernels::sigmoid_scalar(x[i]);
                    const S ds = std::abs(static_cast<double>(x[i])) > kernels::kSigmoidClamp ? S{0} : s * (S{1} - s);
                    ga[i] += g[i] * (s + x[i] * ds);
                }
                return;
            }
            case OpKind::abs: {
                const auto& x = nodes_[in[0]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += x[i] > S{0} ? g[i] : (x[i] < S{0} ? -g[i] : S{0});
                return;
            }
            case OpKind::square: {
                const auto& x = nodes_[in[0]].value;
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += S{2} * x[i] * g[i];
                return;
            }
            case OpKind::sum: {
                auto& ga = grad_slot(grads, in[0]);
                for (auto& v : ga.vec()) v += g[0];
                return;
            }
            case OpKind::mean: {
                auto& ga = grad_slot(grads, in[0]);
                const S share = static_cast<S>(static_cast<double>(g[0]) / static_cast<double>(ga.size()));
                for (auto& v : ga.vec()) v += share;
                return;
            }
            case OpKind::reshape: {
                auto& ga = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                return;
            }
            case OpKind::permute: {
                auto& ga = grad_slot(grads, in[0]);
                for_each_permuted(ga.shape(), n.ints, [&](std::size_t o, std::size_t i) { ga[i] += g[o]; });
                return;
            }
            case OpKind::concat_channels: {
                const auto& x = nodes_[in[0]].value;
                const auto& y = nodes_[in[1]].value;
                const std::size_t N = x.dim(0), C1 = x.dim(1), C2 = y.dim(1), P = x.dim(2) * x.dim(3);
                auto& ga = grad_slot(grads, in[0]);
                auto& gb = grad_slot(grads, in[1]);
                for (std::size_t nn = 0; nn < N; ++nn) {
                    for (std::size_t i = 0; i < C1 * P; ++i) ga[nn * C1 * P + i] += g[nn * (C1 + C2) * P + i];
                    for (std::size_t i = 0; i < C2 * P; ++i) gb[nn * C2 * P + i] += g[nn * (C1 + C2) * P + C1 * P + i];
                }
                return;
            }
            case OpKind::gate_mul: {
                const auto& gate = nodes_[in[0]].value;
                const auto& x = nodes_[in[1]].value;
                const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
                auto& gg = grad_slot(grads, in[0]);
                auto& gx = grad_slot(grads, in[1]);
                for (std::size_t nn = 0; nn < N; ++nn)
                    for (std::size_t p = 0; p < P; ++p) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t i = (nn * C + c) * P + p;
                            acc += static_cast<double>(g[i]) * static_cast<double>(x[i]);
                            gx[i] += g[i] * gate[nn * P + p];
                        }
                        gg[nn * P + p] += static_cast<S>(acc);
                    }
                return;
            }
            case OpKind::add_channel_bias: {
                const auto& x = nodes_[in[0]].value;
                const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
                auto& gx = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                auto& gb = grad_slot(grads, in[1]);
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t nn = 0; nn < N; ++nn)
                        for (std::size_t p = 0; p < P; ++p) acc += static_cast<double>(g[(nn * C + c) * P + p]);
                    gb[c] += static_cast<S>(acc);
                }
                return;
            }
            case OpKind::mul_channel: {
                const auto& x = nodes_[in[0]].value;
                const auto& sc = nodes_[in[1]].value;
                const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
                auto& gx = grad_slot(grads, in[0]);
                auto& gs = grad_slot(grads, in[1]);
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t nn = 0; nn < N; ++nn)
                        for (std::size_t p = 0; p < P; ++p) {
                            const std::size_t i = (nn * C + c) * P + p;
                            acc += static_cast<double>(g[i]) * static_cast<double>(x[i]);
                            gx[i] += g[i] * sc[c];
                        }
                    gs[c] += static_cast<S>(acc);
                }
                return;
            }
            case OpKind::channel_pool: {
                const auto& x = nodes_[in[0]].value;
                const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
                auto& gx = grad_slot(grads, in[0]);
                const bool is_max = n.ints[0] == 1;
                for (std::size_t nn = 0; nn < N; ++nn)
                    for (std::size_t p = 0; p < P; ++p) {
                        if (is_max) {
                            std::size_t best = 0;
                            for (std::size_t c = 1; c < C; ++c)
                                if (x[(nn * C + c) * P + p] > x[(nn * C + best) * P + p]) best = c;
                            gx[(nn * C + best) * P + p] += g[nn * P + p];
                        } else {
                            const S share = static_cast<S>(static_cast<double>(g[nn * P + p]) / static_cast<double>(C));
                            for (std::size_t c = 0; c < C; ++c) gx[(nn * C + c) * P + p] += share;
                        }
                    }
                return;
            }
            case OpKind::conv3x3:
                backprop_conv(n, g, grads);
                return;
            case OpKind::linear:
                backprop_linear(n, g, grads);
                return;
            case OpKind::attention:
                backprop_attention(n, g, grads);
                return;
            case OpKind::dft2: {
                // Adjoint of the forward DFT: real part of the unscaled inverse
                // transform applied to (g_re + i g_im).
                const auto& x = nodes_[in[0]].value;
                const std::size_t H = x.dim(2), W = x.dim(3), planes = x.dim(0) * x.dim(1);
                std::vector<Complex> work(x.size());
                for (std::size_t i = 0; i < work.size(); ++i)
                    work[i] = Complex(static_cast<double>(g[2 * i]), static_cast<double>(g[2 * i + 1]));
                for (std::size_t p = 0; p < planes; ++p)
                    transform_plane(std::span<Complex>(work).subspan(p * H * W, H * W), H, W, true);
                auto& gx = grad_slot(grads, in[0]);
                for (std::size_t i = 0; i < work.size(); ++i) gx[i] += static_cast<S>(work[i].real());
                return;
            }
        }
    }

    void backprop_conv(const Node& n, const Tensor<S>& g, std::vector<Tensor<S>>& grads) const {
        const auto& x = nodes_[n.inputs[0]].value;
        const auto& k = nodes_[n.inputs[1]].value;
        const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = k.dim(0);
        auto& gx = grad_slot(grads, n.inputs[0]);
        auto& gk = grad_slot(grads, n.inputs[1]);
        auto& gb = grad_slot(grads, n.inputs[2]);
        std::vector<double> kacc(Cout * Cin * 9, 0.0);
        std::vector<double> xacc(x.size(), 0.0);
        for (std::size_t nn = 0; nn < N; ++nn)
            for (std::size_t co = 0; co < Cout; ++co) {
                const S* go = &g[(nn * Cout + co) * H * W];
                double bacc = 0.0;
                for (std::size_t i = 0; i < H * W; ++i) bacc += static_cast<double>(go[i]);
                gb[co] += static_cast<S>(bacc);
                for (std::size_t ci = 0; ci < Cin; ++ci) {
                    const S* src = &x[(nn * Cin + ci) * H * W];
                    double* dsrc = &xacc[(nn * Cin + ci) * H * W];
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const std::size_t kidx = (co * Cin + ci) * 9 + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
                            const double w = static_cast<double>(k[kidx]);
                            const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? H - 1 : H;
                            const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? W - 1 : W;
                            double acc = 0.0;
                            for (std::size_t y = y0; y < y1; ++y) {
                                const std::size_t srow = (y + dy) * W;
                                for (std::size_t xx = x0; xx < x1; ++xx) {
                                    const double gv = static_cast<double>(go[y * W + xx]);
                                    acc += gv * static_cast<double>(src[srow + xx + dx]);
                                    dsrc[srow + xx + dx] += gv * w;
                                }
                            }
                            kacc[kidx] += acc;
                        }
                }
            }
        for (std::size_t i = 0; i < kacc.size(); ++i) gk[i] += static_cast<S>(kacc[i]);
        for (std::size_t i = 0; i < xacc.size(); ++i) gx[i] += static_cast<S>(xacc[i]);
    }

    void backprop_linear(const Node& n, const Tensor<S>& g, std::vector<Tensor<S>>& grads) const {
        const auto& x = nodes_[n.inputs[0]].value;
        const auto& w = nodes_[n.inputs[1]].value;
        const std::size_t D = w.dim(0), O = w.dim(1), rows = x.size() / D;
        auto& gx = grad_slot(grads, n.inputs[0]);
        auto& gw = grad_slot(grads, n.inputs[1]);
        auto& gb = grad_slot(grads, n.inputs[2]);
        std::vector<double> wacc(D * O, 0.0), bacc(O, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                const double xv = static_cast<double>(x[r * D + d]);
                for (std::size_t o = 0; o < O; ++o) {
                    const double gv = static_cast<double>(g[r * O + o]);
                    acc += gv * static_cast<double>(w[d * O + o]);
                    wacc[d * O + o] += xv * gv;
                }
                gx[r * D + d] += static_cast<S>(acc);
            }
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < O; ++o) bacc[o] += static_cast<double>(g[r * O + o]);
        for (std::size_t i = 0; i < wacc.size(); ++i) gw[i] += static_cast<S>(wacc[i]);
        for (std::size_t o = 0; o < O; ++o) gb[o] += static_cast<S>(bacc[o]);
    }

    void backprop_attention(const Node& n, const Tensor<S>& g, std::vector<Tensor<S>>& grads) const {
        const auto& Q = nodes_[n.inputs[0]].value;
        const auto& K = nodes_[n.inputs[1]].value;
        const auto& V = nodes_[n.inputs[2]].value;
        const auto& P = n.cache;
        const std::size_t B = Q.dim(0), N = Q.dim(1), D = Q.dim(2);
        const double inv = 1.0 / std::sqrt(static_cast<double>(D));
        auto& gq = grad_slot(grads, n.inputs[0]);
        auto& gk = grad_slot(grads, n.inputs[1]);
        auto& gv = grad_slot(grads, n.inputs[2]);
        std::vector<double> dp(N), ds(N);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t qi = (b * N + i) * D;
                double dot = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    const double p = static_cast<double>(P[(b * N + i) * N + j]);
                    double acc = 0.0;
                    for (std::size_t d = 0; d < D; ++d) {
                        const double gi = static_cast<double>(g[qi + d]);
                        acc += gi * static_cast<double>(V[(b * N + j) * D + d]);
                        gv[(b * N + j) * D + d] += static_cast<S>(p * gi);
                    }
                    dp[j] = acc;
                    dot += acc * p;
                }
                for (std::size_t j = 0; j < N; ++j)
                    ds[j] = static_cast<double>(P[(b * N + i) * N + j]) * (dp[j] - dot) * inv;
                for (std::size_t j = 0; j < N; ++j) {
                    if (ds[j] == 0.0) continue;
                    const std::size_t kj = (b * N + j) * D;
                    for (std::size_t d = 0; d < D; ++d) {
                        gq[qi + d] += static_cast<S>(ds[j] * static_cast<double>(K[kj + d]));
                        gk[kj + d] += static_cast<S>(ds[j] * static_cast<double>(Q[qi + d]));
                    }
                }
            }
    }

    std::vector<Node> nodes_;
    std::set<std::size_t> param_offsets_;
    std::size_t param_extent_ = 0;
};

}  // namespace star
