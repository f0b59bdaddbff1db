#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "star/losses.hpp"
#include "star/network.hpp"
#include "star/rng.hpp"

using namespace star;

namespace {

DenoiserSpec small_spec(LiemPosition p = LiemPosition::i, bool spa = true, bool temp = true) {
    DenoiserSpec s;
    s.width = 4;
    s.num_blocks = 2;
    s.patch = 2;
    s.time_features = 4;
    s.liem = {p, spa, temp};
    return s;
}

// Params of `spec` with every entry drawn uniformly, biases included.
Params<double> random_params(const DenoiserSpec& spec, std::uint64_t seed, double scale = 0.5) {
    auto p = Params<double>::zeros(spec);
    Rng rng(seed);
    for (auto& v : p.values) v = rng.uniform(-scale, scale);
    return p;
}

// Spatial or temporal attention from loops: tokens, projections, attention, output projection.
Tensor<double> attention_oracle(const Params<double>& p, const Tensor<double>& f, BlockKind kind, const std::string& pre) {
    const std::size_t T = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
    const bool spatial = kind == BlockKind::spatial;
    const std::size_t B = spatial ? T : H * W, N = spatial ? H * W : T;
    Tensor<double> tok({B, N, C});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t b = spatial ? t : y * W + x, n = spatial ? y * W + x : t;
                    tok.at(b, n, c) = f.at(t, c, y, x);
                }
    const auto proj = [&](const Tensor<double>& in, const std::string& name) {
        const auto w = p.tensor(pre + name + ".w"), bias = p.tensor(pre + name + ".b");
        Tensor<double> out(in.shape());
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < C; ++o) {
                    double acc = bias[o];
                    for (std::size_t d = 0; d < C; ++d) acc += in.at(b, n, d) * w.at(d, o);
                    out.at(b, n, o) = acc;
                }
        return out;
    };
    const auto o = proj(oracle::attention(proj(tok, "q"), proj(tok, "k"), proj(tok, "v")), "o");
    Tensor<double> out(f.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c)
                    out.at(t, c, y, x) = o.at(spatial ? t : y * W + x, spatial ? y * W + x : t, c);
    return out;
}

Tensor<double> liem_oracle(const Params<double>& p, const Tensor<double>& f, const std::string& pre) {
    const std::size_t T = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
    Tensor<double> pooled({T, 2, H, W});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double s = 0, m = -1e300;
                for (std::size_t c = 0; c < C; ++c) {
                    s += f.at(t, c, y, x);
                    m = std::max(m, f.at(t, c, y, x));
                }
                pooled.at(t, 0, y, x) = s / static_cast<double>(C);
                pooled.at(t, 1, y, x) = m;
            }
    const auto logits = oracle::conv3x3(pooled, p.tensor(pre + "liem.w"), p.tensor(pre + "liem.b"));
    Tensor<double> out(f.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    out.at(t, c, y, x) = f.at(t, c, y, x) / (1.0 + std::exp(-logits.at(t, 0, y, x)));
    return out;
}

Tensor<double> run_block(const Params<double>& p, const Tensor<double>& f, BlockKind kind, LiemPosition pos) {
    Graph<double> g;
    Binder<double> bind(g, p);
    return g.value(block_forward(bind, g.constant(f), kind, pos, "block0."));
}

}  // namespace

TEST_CASE("patchify and unpatchify are inverse rearrangements") {
    Rng rng(1);
    auto x = rng.uniform_tensor<double>({2, 3, 8, 4});
    Graph<double> g;
    Var p = patchify(g, g.constant(x), 2);
    REQUIRE(g.value(p).shape() == Shape{2, 12, 4, 2});
    // channel (c, dy, dx) of patch (Y, X) holds pixel (2Y + dy, 2X + dx) of channel c
    REQUIRE(g.value(p).at(1, 2 * 4 + 1 * 2 + 0, 3, 1) == x.at(1, 2, 7, 2));
    REQUIRE(g.value(unpatchify(g, p, 2, 3)) == x);
    REQUIRE_THROWS_AS(patchify(g, g.constant(Tensor<double>({1, 3, 6, 5})), 2), ShapeError);
}

TEST_CASE("global attention matches a loop-built oracle in both directions") {
    const auto spec = small_spec();
    const auto p = random_params(spec, 2);
    Rng rng(3);
    auto f = rng.uniform_tensor<double>({3, 4, 2, 3}, -1, 1);
    for (auto kind : {BlockKind::spatial, BlockKind::temporal}) {
        Graph<double> g;
        Binder<double> bind(g, p);
        const auto out = g.value(global_attention(bind, g.constant(f), kind, "block0."));
        REQUIRE(max_abs_diff(out, attention_oracle(p, f, kind, "block0.")) < 1e-12);
    }
}

TEST_CASE("block wiring per LIEM position matches the composed oracles") {
    const auto spec = small_spec();
    const auto p = random_params(spec, 4);
    Rng rng(5);
    auto f = rng.uniform_tensor<double>({2, 4, 3, 3}, -1, 1);
    const auto K = BlockKind::spatial;
    const auto add = [](const Tensor<double>& a, const Tensor<double>& b) { return axpby(1.0, a, 1.0, b); };
    const auto G = [&](const Tensor<double>& x) { return attention_oracle(p, x, K, "block0."); };
    const auto L = [&](const Tensor<double>& x) { return liem_oracle(p, x, "block0."); };
    REQUIRE(max_abs_diff(run_block(p, f, K, LiemPosition::none), add(G(f), f)) < 1e-12);
    REQUIRE(max_abs_diff(run_block(p, f, K, LiemPosition::i), add(G(L(f)), f)) < 1e-12);
    REQUIRE(max_abs_diff(run_block(p, f, K, LiemPosition::ii), add(L(G(f)), f)) < 1e-12);
    REQUIRE(max_abs_diff(run_block(p, f, K, LiemPosition::iii), L(add(G(f), f))) < 1e-12);
}

TEST_CASE("zero-initialized LIEM gates at exactly one half") {
    const auto spec = small_spec();
    auto p = random_params(spec, 6);
    p.fill("block0.liem.w", 0.0);
    p.fill("block0.liem.b", 0.0);
    Rng rng(7);
    auto f = rng.uniform_tensor<double>({2, 4, 3, 3}, -1, 1);
    Graph<double> g;
    Binder<double> bind(g, p);
    REQUIRE(g.value(liem_forward(bind, g.constant(f), "block0.")) == scaled(f, 0.5));
}

TEST_CASE("zero output projection makes position (i) blocks identities") {
    const auto spec = small_spec();
    auto p = random_params(spec, 8);
    for (std::size_t k = 0; k < spec.num_blocks; ++k) {
        p.fill(block_prefix(k) + "o.w", 0.0);
        p.fill(block_prefix(k) + "o.b", 0.0);
    }
    Rng rng(9);
    auto f = rng.uniform_tensor<double>({2, 4, 3, 3}, -1, 1);
    for (auto kind : {BlockKind::spatial, BlockKind::temporal}) REQUIRE(run_block(p, f, kind, LiemPosition::i) == f);
}

TEST_CASE("LIEM flags add gates to exactly the declared block types") {
    DenoiserSpec base = small_spec(LiemPosition::none);
    base.num_blocks = 5;  // three spatial, two temporal
    const std::size_t plain = build_layout(base).total();
    const std::size_t per_gate = 2 * 9 + 1;
    for (auto pos : {LiemPosition::i, LiemPosition::ii, LiemPosition::iii})
        for (bool spa : {false, true})
            for (bool temp : {false, true}) {
                auto s = base;
                s.liem = {pos, spa, temp};
                const std::size_t gates = (spa ? 3 : 0) + (temp ? 2 : 0);
                REQUIRE(build_layout(s).total() == plain + gates * per_gate);
                for (std::size_t k = 0; k < 5; ++k)
                    REQUIRE(build_layout(s).contains(block_prefix(k) + "liem.w") ==
                            (k % 2 == 0 ? spa : temp));
            }
}

TEST_CASE("denoiser output has the input shape and depends on the conditioning") {
    const auto spec = small_spec();
    const auto p = init_params<float>(spec, 1);
    Rng rng(10);
    auto z = rng.normal_tensor<float>({3, 3, 8, 8});
    ConditionSignal<float> c1{rng.uniform_tensor<float>(z.shape())}, c2{rng.uniform_tensor<float>(z.shape())};
    const auto y1 = predict(spec, p, z, 500, &c1), y2 = predict(spec, p, z, 500, &c2);
    REQUIRE(y1.shape() == z.shape());
    REQUIRE(max_abs_diff(y1, y2) > 0.0);
    REQUIRE(max_abs_diff(y1, predict(spec, p, z, 100, &c1)) > 0.0);
    REQUIRE_THROWS_AS(predict(spec, p, z, 500, static_cast<const ConditionSignal<float>*>(nullptr)), std::invalid_argument);
    REQUIRE_THROWS_AS(predict(spec, p, Tensor<float>({1, 2, 8, 8}), 500, &c1), ShapeError);
}

TEST_CASE("denoiser parameter gradients match finite differences") {
    for (auto pos : {LiemPosition::i, LiemPosition::ii, LiemPosition::iii}) {
        const auto spec = small_spec(pos);
        auto p = random_params(spec, 11, 0.3);
        Rng rng(12);
        auto z = rng.normal_tensor<double>({2, 3, 4, 4});
        ConditionSignal<double> cond{rng.uniform_tensor<double>(z.shape())};
        auto target = rng.normal_tensor<double>(z.shape());
        const auto eval = [&](const std::vector<double>& v, std::vector<double>* grad) {
            Params<double> q{p.layout, v};
            Graph<double> g;
            Binder<double> bind(g, q);
            Var loss = g.mean(g.square(g.sub(denoiser_forward(bind, spec, z, 300, &cond), g.constant(target))));
            if (grad) *grad = g.backward(loss, v.size());
            return g.scalar(loss);
        };
        std::vector<double> analytic;
        eval(p.values, &analytic);
        const std::function<double(const std::vector<double>&)> f = [&](const std::vector<double>& v) { return eval(v, nullptr); };
        for (std::size_t i = 0; i < p.values.size(); i += 7) {
            INFO("parameter " << i);
            REQUIRE(oracle::grad_close(analytic[i], oracle::central_difference(f, p.values, i, 1e-5), 1e-4, 1e-8));
        }
    }
}

TEST_CASE("spec hash tracks every architectural field") {
    DenoiserSpec a;
    auto b = a;
    REQUIRE(spec_hash(a) == spec_hash(b));
    b.liem.temp_local = false;
    REQUIRE(spec_hash(a) != spec_hash(b));
    b = a;
    b.width = 8;
    REQUIRE(spec_hash(a) != spec_hash(b));
}

TEST_CASE("initialization is seeded and bounded by fan-in") {
    DenoiserSpec s;
    const auto a = init_params<float>(s, 3), b = init_params<float>(s, 3), c = init_params<float>(s, 4);
    REQUIRE(a.values == b.values);
    REQUIRE(a.values != c.values);
    for (const auto& e : a.layout.entries()) {
        const auto t = a.tensor(e.name);
        const double bound = e.fan_in ? 1.0 / std::sqrt(static_cast<double>(e.fan_in)) : 0.0;
        for (float v : t.vec()) REQUIRE(std::abs(v) <= bound);
    }
}

TEST_CASE("bilinear upsampling preserves constants and half-pixel alignment") {
    Tensor<float> c({1, 1, 2, 2}, 0.25f);
    const auto up = upsample_bilinear(c, 8, 8);
    for (float v : up.vec()) REQUIRE(v == Catch::Approx(0.25f));
    Tensor<double> ramp({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    const auto r = upsample_bilinear(ramp, 1, 4);
    REQUIRE(r[0] == 0.0);  // clamped edge
    REQUIRE(r[1] == Catch::Approx(0.25));
    REQUIRE(r[2] == Catch::Approx(0.75));
    REQUIRE(r[3] == 1.0);
}
