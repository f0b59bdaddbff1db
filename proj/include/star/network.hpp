#pragma once

// Toy video denoiser: patch embedding, interleaved spatial/temporal
// self-attention blocks with optional local-information gating (LIEM),
// and an additive low-resolution conditioning branch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/autograd.hpp"
#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

enum class LiemPosition { none, i, ii, iii };

struct LiemConfig {
    LiemPosition position = LiemPosition::i;
    bool spa_local = true;
    bool temp_local = true;

    friend bool operator==(const LiemConfig&, const LiemConfig&) = default;
};

enum class BlockKind { spatial, temporal };
enum class ConditioningMode { none, lr_branch };

struct DenoiserSpec {
    std::size_t channels = 3;       // video channels
    std::size_t width = 16;         // feature channels
    std::size_t num_blocks = 4;     // alternating spatial, temporal, ...
    std::size_t patch = 4;          // space-to-depth factor of the embedding
    std::size_t time_features = 16; // sinusoidal step features
    LiemConfig liem;
    ConditioningMode conditioning = ConditioningMode::lr_branch;

    friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;

    BlockKind block_kind(std::size_t k) const { return k % 2 == 0 ? BlockKind::spatial : BlockKind::temporal; }

    /// Whether block k carries a LIEM.
    bool liem_in_block(std::size_t k) const {
        if (liem.position == LiemPosition::none) return false;
        return block_kind(k) == BlockKind::spatial ? liem.spa_local : liem.temp_local;
    }

    void validate() const {
        if (channels == 0 || width == 0 || patch == 0 || time_features == 0 || time_features % 2 != 0)
            throw std::invalid_argument("denoiser spec: extents must be positive and time_features even");
    }
};

inline const char* liem_position_name(LiemPosition p) {
    switch (p) {
        case LiemPosition::none: return "none";
        case LiemPosition::i: return "i";
        case LiemPosition::ii: return "ii";
        case LiemPosition::iii: return "iii";
    }
    return "?";
}

/// Canonical text form; feeds the checkpoint hash.
inline std::string describe(const DenoiserSpec& s) {
    std::ostringstream os;
    os << "channels=" << s.channels << ";width=" << s.width << ";blocks=" << s.num_blocks << ";patch=" << s.patch
       << ";time_features=" << s.time_features << ";liem=" << liem_position_name(s.liem.position) << ","
       << s.liem.spa_local << "," << s.liem.temp_local
       << ";conditioning=" << (s.conditioning == ConditioningMode::lr_branch ? "lr_branch" : "none");
    return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t spec_hash(const DenoiserSpec& s) { return fnv1a(describe(s)); }

struct ParamEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t fan_in = 0;  // 0 for biases
};

/// Ordered list of named parameter slices inside one flat vector.
class ParamLayout {
public:
    void add(std::string name, Shape shape, std::size_t fan_in) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
        index_[name] = entries_.size();
        const std::size_t n = shape_numel(shape);
        entries_.push_back({std::move(name), std::move(shape), total_, fan_in});
        total_ += n;
    }
    const ParamEntry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
        return entries_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t total() const { return total_; }

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::size_t total_ = 0;
};

inline std::string block_prefix(std::size_t k) { return "block" + std::to_string(k) + "."; }

inline ParamLayout build_layout(const DenoiserSpec& spec) {
    spec.validate();
    const std::size_t C = spec.width, Cp = spec.channels * spec.patch * spec.patch;
    ParamLayout L;
    L.add("embed.w", {C, Cp, 3, 3}, Cp * 9);
    L.add("embed.b", {C}, 0);
    L.add("time.w", {spec.time_features, C}, spec.time_features);
    L.add("time.b", {C}, 0);
    L.add("film.in.w", {spec.time_features, C}, spec.time_features);
    L.add("film.in.b", {C}, 0);
    L.add("film.out.w", {spec.time_features, C}, spec.time_features);
    L.add("film.out.b", {C}, 0);
    if (spec.conditioning == ConditioningMode::lr_branch) {
        L.add("cond.w1", {C, Cp, 3, 3}, Cp * 9);
        L.add("cond.b1", {C}, 0);
        L.add("cond.w2", {C, C, 3, 3}, C * 9);
        L.add("cond.b2", {C}, 0);
    }
    for (std::size_t k = 0; k < spec.num_blocks; ++k) {
        const auto p = block_prefix(k);
        for (const char* proj : {"q", "k", "v", "o"}) {
            L.add(p + proj + ".w", {C, C}, C);
            L.add(p + proj + ".b", {C}, 0);
        }
        if (spec.liem_in_block(k)) {
            L.add(p + "liem.w", {1, 2, 3, 3}, 18);
            L.add(p + "liem.b", {1}, 0);
        }
    }
    L.add("out.w", {Cp, C, 3, 3}, C * 9);
    L.add("out.b", {Cp}, 0);
    L.add("skip.z.w", {spec.time_features, Cp}, spec.time_features);
    L.add("skip.z.b", {Cp}, 0);
    if (spec.conditioning == ConditioningMode::lr_branch) {
        L.add("skip.c.w", {spec.time_features, Cp}, spec.time_features);
        L.add("skip.c.b", {Cp}, 0);
    }
    return L;
}

/// Flat parameter vector with named views.
template <class S>
struct Params {
    ParamLayout layout;
    std::vector<S> values;

    static Params zeros(const DenoiserSpec& spec) {
        Params p{build_layout(spec), {}};
        p.values.assign(p.layout.total(), S{0});
        return p;
    }

    Tensor<S> tensor(const std::string& name) const {
        const auto& e = layout.at(name);
        const auto first = values.begin() + static_cast<std::ptrdiff_t>(e.offset);
        return Tensor<S>(e.shape, std::vector<S>(first, first + static_cast<std::ptrdiff_t>(shape_numel(e.shape))));
    }

    void set(const std::string& name, const Tensor<S>& t) {
        const auto& e = layout.at(name);
        require_same_shape(e.shape, t.shape(), name.c_str());
        std::copy(t.vec().begin(), t.vec().end(), values.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }

    void fill(const std::string& name, S v) {
        const auto& e = layout.at(name);
        std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(e.offset), shape_numel(e.shape), v);
    }

    template <class T>
    Params<T> cast() const {
        return Params<T>{layout, std::vector<T>(values.begin(), values.end())};
    }
};

/// Fan-in-scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
template <class S = float>
Params<S> init_params(const DenoiserSpec& spec, std::uint64_t seed) {
    auto p = Params<S>::zeros(spec);
    Rng rng(seed);
    for (const auto& e : p.layout.entries()) {
        if (e.fan_in == 0) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        for (std::size_t i = 0; i < shape_numel(e.shape); ++i)
            p.values[e.offset + i] = static_cast<S>(rng.uniform(-bound, bound));
    }
    return p;
}

/// Registers parameter slices as graph leaves on first use.
template <class S>
class Binder {
public:
    Binder(Graph<S>& g, const Params<S>& p) : graph_(g), params_(p) {}
    Var operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        Var v = graph_.parameter(params_.tensor(name), params_.layout.at(name).offset);
        vars_.emplace(name, v);
        return v;
    }
    Graph<S>& graph() { return graph_; }
    const Params<S>& params() const { return params_; }

private:
    Graph<S>& graph_;
    const Params<S>& params_;
    std::map<std::string, Var> vars_;
};

/// [T,C,H,W] -> [T, C p^2, H/p, W/p].
template <class S>
Var patchify(Graph<S>& g, Var x, std::size_t p) {
    const Shape s = g.value(x).shape();
    if (s[2] % p || s[3] % p)
        throw ShapeError("patchify: frame " + shape_str(s) + " not divisible by patch " + std::to_string(p));
    if (p == 1) return x;
    Var r = g.reshape(x, {s[0], s[1], s[2] / p, p, s[3] / p, p});
    r = g.permute(r, {0, 1, 3, 5, 2, 4});
    return g.reshape(r, {s[0], s[1] * p * p, s[2] / p, s[3] / p});
}

/// Inverse of patchify for `channels` output channels.
template <class S>
Var unpatchify(Graph<S>& g, Var x, std::size_t p, std::size_t channels) {
    const Shape s = g.value(x).shape();
    if (p == 1) return x;
    Var r = g.reshape(x, {s[0], channels, p, p, s[2], s[3]});
    r = g.permute(r, {0, 1, 4, 2, 5, 3});
    return g.reshape(r, {s[0], channels, s[2] * p, s[3] * p});
}

/// L(F) * F with L(F) = sigmoid(conv3x3([avgpool_c(F), maxpool_c(F)])).
template <class S>
Var liem_forward(Binder<S>& bind, Var features, const std::string& prefix) {
    auto& g = bind.graph();
    Var pooled = g.concat_channels(g.channel_pool(features, PoolKind::average), g.channel_pool(features, PoolKind::max));
    Var gate = g.sigmoid(g.conv3x3(pooled, bind(prefix + "liem.w"), bind(prefix + "liem.b")));
    return g.gate_mul(gate, features);
}

/// Single-head self-attention G over tokens of [T,C,H,W] features: the H*W
/// pixels of each frame (spatial) or the T frames at each pixel (temporal).
template <class S>
Var global_attention(Binder<S>& bind, Var features, BlockKind kind, const std::string& prefix) {
    auto& g = bind.graph();
    const Shape s = g.value(features).shape();
    const std::size_t T = s[0], C = s[1], H = s[2], W = s[3];
    Var tokens = kind == BlockKind::spatial ? g.reshape(g.permute(features, {0, 2, 3, 1}), {T, H * W, C})
                                            : g.reshape(g.permute(features, {2, 3, 0, 1}), {H * W, T, C});
    Var q = g.linear(tokens, bind(prefix + "q.w"), bind(prefix + "q.b"));
    Var k = g.linear(tokens, bind(prefix + "k.w"), bind(prefix + "k.b"));
    Var v = g.linear(tokens, bind(prefix + "v.w"), bind(prefix + "v.b"));
    Var o = g.linear(g.attention(q, k, v), bind(prefix + "o.w"), bind(prefix + "o.b"));
    if (kind == BlockKind::spatial) return g.permute(g.reshape(o, {T, H, W, C}), {0, 3, 1, 2});
    return g.permute(g.reshape(o, {H, W, T, C}), {2, 3, 0, 1});
}

/// One residual attention block with LIEM wired per `position`:
///   none: G(F) + F
///   i:    G(L(F) F) + F
///   ii:   L(G(F)) G(F) + F
///   iii:  L(G(F) + F) (G(F) + F)
template <class S>
Var block_forward(Binder<S>& bind, Var features, BlockKind kind, LiemPosition position, const std::string& prefix) {
    auto& g = bind.graph();
    switch (position) {
        case LiemPosition::none:
            return g.add(global_attention(bind, features, kind, prefix), features);
        case LiemPosition::i:
            return g.add(global_attention(bind, liem_forward(bind, features, prefix), kind, prefix), features);
        case LiemPosition::ii: {
            Var attn = global_attention(bind, features, kind, prefix);
            return g.add(liem_forward(bind, attn, prefix), features);
        }
        case LiemPosition::iii: {
            Var res = g.add(global_attention(bind, features, kind, prefix), features);
            return liem_forward(bind, res, prefix);
        }
    }
    throw std::invalid_argument("block_forward: unknown LIEM position");
}

/// Sinusoidal features of the diffusion step.
template <class S>
Tensor<S> step_features(int t, std::size_t n) {
    Tensor<S> f({1, n});
    const std::size_t half = n / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        f[k] = static_cast<S>(std::sin(t * freq));
        f[half + k] = static_cast<S>(std::cos(t * freq));
    }
    return f;
}

/// Bilinear resize of [T,C,h,w] to [T,C,H,W] with half-pixel centers and edge clamping.
template <class S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, std::size_t H, std::size_t W) {
    require_rank(x.shape(), 4, "upsample_bilinear");
    const std::size_t T = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<S> out({T, C, H, W});
    const double sy = static_cast<double>(h) / H, sx = static_cast<double>(w) / W;
    for (std::size_t p = 0; p < T * C; ++p)
        for (std::size_t y = 0; y < H; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t xx = 0; xx < W; ++xx) {
                const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - static_cast<double>(x0);
                const auto px = [&](std::size_t yy, std::size_t xq) { return static_cast<double>(x[(p * h + yy) * w + xq]); };
                out[(p * H + y) * W + xx] = static_cast<S>((1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                                                           wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1)));
            }
        }
    return out;
}

/// c_l: the LR video resized to the denoiser's input resolution.
template <class S>
struct ConditionSignal {
    Tensor<S> upsampled;
};

template <class S>
ConditionSignal<S> make_condition(const Tensor<S>& x_l, std::size_t H, std::size_t W) {
    return {upsample_bilinear(x_l, H, W)};
}

/// Velocity prediction for Z_t at step t. Output shape equals input shape.
template <class S>
Var denoiser_forward(Binder<S>& bind, const DenoiserSpec& spec, const Tensor<S>& z_t, int t,
                     const ConditionSignal<S>* cond) {
    auto& g = bind.graph();
    require_rank(z_t.shape(), 4, "denoiser_forward");
    if (z_t.dim(1) != spec.channels)
        throw ShapeError("denoiser_forward: expected " + std::to_string(spec.channels) + " channels, got " +
                         shape_str(z_t.shape()));
    Var x = patchify(g, g.constant(z_t), spec.patch);
    Var h = g.conv3x3(x, bind("embed.w"), bind("embed.b"));
    Var feats = g.constant(step_features<S>(t, spec.time_features));
    Var ones = g.constant(Tensor<S>({spec.width}, std::vector<S>(spec.width, S{1})));
    // per-channel scale 1 + gamma(t)
    auto film = [&](Var v, const std::string& name) {
        Var gamma = g.reshape(g.linear(feats, bind(name + ".w"), bind(name + ".b")), {spec.width});
        return g.mul_channel(v, g.add(ones, gamma));
    };
    // step-gated linear path from the patchified inputs straight to the output
    const std::size_t Cp = spec.channels * spec.patch * spec.patch;
    auto gate = [&](Var v, const std::string& name) {
        return g.mul_channel(v, g.reshape(g.linear(feats, bind(name + ".w"), bind(name + ".b")), {Cp}));
    };
    Var skip = gate(x, "skip.z");
    Var temb = g.linear(feats, bind("time.w"), bind("time.b"));
    h = g.add_channel_bias(film(h, "film.in"), g.reshape(temb, {spec.width}));
    if (spec.conditioning == ConditioningMode::lr_branch) {
        if (!cond) throw std::invalid_argument("denoiser_forward: conditioning signal required");
        require_same_shape(cond->upsampled.shape(), z_t.shape(), "denoiser_forward condition");
        Var c = patchify(g, g.constant(cond->upsampled), spec.patch);
        skip = g.add(skip, gate(c, "skip.c"));
        c = g.silu(g.conv3x3(c, bind("cond.w1"), bind("cond.b1")));
        h = g.add(h, g.conv3x3(c, bind("cond.w2"), bind("cond.b2")));
    }
    for (std::size_t k = 0; k < spec.num_blocks; ++k) {
        const auto pos = spec.liem_in_block(k) ? spec.liem.position : LiemPosition::none;
        h = block_forward(bind, h, spec.block_kind(k), pos, block_prefix(k));
    }
    Var y = g.add(g.conv3x3(g.silu(film(h, "film.out")), bind("out.w"), bind("out.b")), skip);
    return unpatchify(g, y, spec.patch, spec.channels);
}

/// Forward pass without keeping the graph.
template <class S>
Tensor<S> predict(const DenoiserSpec& spec, const Params<S>& params, const Tensor<S>& z_t, int t,
                  const ConditionSignal<S>* cond) {
    Graph<S> g;
    Binder<S> bind(g, params);
    return g.value(denoiser_forward(bind, spec, z_t, t, cond));
}

}  // namespace star
