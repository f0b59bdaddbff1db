#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <string>

#include "oracles.hpp"
#include "star/autograd.hpp"
#include "star/rng.hpp"

using namespace star;

namespace {

using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Registers each input shape as a parameter slice, contracts the op output
// with fixed random weights, and compares backward() to central differences.
void check_gradients(const std::string& name, const std::vector<Shape>& shapes, const Builder& op,
                     std::uint64_t seed = 1, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> flat;
    std::vector<std::size_t> offsets;
    for (const auto& s : shapes) {
        offsets.push_back(flat.size());
        for (std::size_t i = 0; i < shape_numel(s); ++i) flat.push_back(rng.uniform(lo, hi));
    }
    Tensor<double> contraction;
    const auto eval = [&](const std::vector<double>& x, std::vector<double>* grad) {
        Graph<double> g;
        std::vector<Var> in;
        for (std::size_t k = 0; k < shapes.size(); ++k) {
            const auto first = x.begin() + static_cast<std::ptrdiff_t>(offsets[k]);
            in.push_back(g.parameter(Tensor<double>(shapes[k], std::vector<double>(first, first + static_cast<std::ptrdiff_t>(shape_numel(shapes[k])))), offsets[k]));
        }
        Var out = op(g, in);
        if (contraction.empty()) {
            Rng r2(seed + 99);
            contraction = r2.uniform_tensor<double>(g.value(out).shape(), -1, 1);
        }
        Var loss = g.sum(g.mul_const(out, contraction));
        if (grad) *grad = g.backward(loss, x.size());
        return g.scalar(loss);
    };
    std::vector<double> analytic;
    eval(flat, &analytic);
    const std::function<double(const std::vector<double>&)> f = [&](const std::vector<double>& x) { return eval(x, nullptr); };
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double num = oracle::central_difference(f, flat, i, 1e-5);
        INFO(name << " coordinate " << i << ": analytic " << analytic[i] << " numeric " << num);
        REQUIRE(oracle::grad_close(analytic[i], num, 1e-5, 1e-7));
    }
}

}  // namespace

TEST_CASE("elementwise gradients") {
    const Shape s{2, 3, 4};
    check_gradients("add", {s, s}, [](auto& g, const auto& v) { return g.add(v[0], v[1]); });
    check_gradients("sub", {s, s}, [](auto& g, const auto& v) { return g.sub(v[0], v[1]); });
    check_gradients("scale", {s}, [](auto& g, const auto& v) { return g.scale(v[0], -1.7); });
    check_gradients("mul", {s, s}, [](auto& g, const auto& v) { return g.mul(v[0], v[1]); });
    check_gradients("mul_const", {s}, [](auto& g, const auto& v) {
        return g.mul_const(v[0], Rng(4).uniform_tensor<double>({2, 3, 4}, -2, 2));
    });
    check_gradients("sigmoid", {s}, [](auto& g, const auto& v) { return g.sigmoid(g.scale(v[0], 3.0)); });
    check_gradients("silu", {s}, [](auto& g, const auto& v) { return g.silu(g.scale(v[0], 3.0)); });
    check_gradients("abs", {s}, [](auto& g, const auto& v) { return g.abs(v[0]); });
    check_gradients("square", {s}, [](auto& g, const auto& v) { return g.square(v[0]); });
}

TEST_CASE("reduction and layout gradients") {
    check_gradients("sum", {{3, 5}}, [](auto& g, const auto& v) { return g.sum(g.square(v[0])); });
    check_gradients("mean", {{3, 5}}, [](auto& g, const auto& v) { return g.mean(g.square(v[0])); });
    check_gradients("reshape", {{2, 6}}, [](auto& g, const auto& v) { return g.reshape(v[0], {3, 4}); });
    check_gradients("permute", {{2, 3, 4, 5}}, [](auto& g, const auto& v) { return g.permute(v[0], {2, 0, 3, 1}); });
    check_gradients("concat", {{2, 1, 3, 3}, {2, 2, 3, 3}}, [](auto& g, const auto& v) { return g.concat_channels(v[0], v[1]); });
}

TEST_CASE("network op gradients") {
    check_gradients("conv3x3", {{2, 3, 5, 4}, {2, 3, 3, 3}, {2}},
                    [](auto& g, const auto& v) { return g.conv3x3(v[0], v[1], v[2]); });
    check_gradients("pool avg", {{2, 4, 3, 3}}, [](auto& g, const auto& v) { return g.channel_pool(v[0], PoolKind::average); });
    check_gradients("pool max", {{2, 4, 3, 3}}, [](auto& g, const auto& v) { return g.channel_pool(v[0], PoolKind::max); });
    check_gradients("gate_mul", {{2, 1, 3, 3}, {2, 4, 3, 3}}, [](auto& g, const auto& v) { return g.gate_mul(v[0], v[1]); });
    check_gradients("channel bias", {{2, 3, 2, 2}, {3}}, [](auto& g, const auto& v) { return g.add_channel_bias(v[0], v[1]); });
    check_gradients("channel scale", {{2, 3, 2, 2}, {3}}, [](auto& g, const auto& v) { return g.mul_channel(v[0], v[1]); });
    check_gradients("linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto& g, const auto& v) { return g.linear(v[0], v[1], v[2]); });
    check_gradients("attention", {{2, 5, 3}, {2, 5, 3}, {2, 5, 3}},
                    [](auto& g, const auto& v) { return g.attention(v[0], v[1], v[2]); });
    check_gradients("dft2", {{2, 2, 4, 6}}, [](auto& g, const auto& v) { return g.dft2(v[0]); });
    check_gradients("dft2 odd", {{1, 1, 5, 3}}, [](auto& g, const auto& v) { return g.dft2(v[0]); });
}

TEST_CASE("attention forward equals softmax(q k^T / sqrt(D)) v") {
    Rng rng(2);
    auto q = rng.uniform_tensor<double>({3, 6, 4}, -2, 2), k = rng.uniform_tensor<double>({3, 6, 4}, -2, 2),
         v = rng.uniform_tensor<double>({3, 6, 4}, -2, 2);
    Graph<double> g;
    const auto out = g.value(g.attention(g.constant(q), g.constant(k), g.constant(v)));
    REQUIRE(max_abs_diff(out, oracle::attention(q, k, v)) < 1e-12);
}

TEST_CASE("permute places axis axes[i] at position i") {
    Tensor<double> x({2, 3, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
    Graph<double> g;
    const auto y = g.value(g.permute(g.constant(x), {2, 0, 1}));
    REQUIRE(y.shape() == Shape{4, 2, 3});
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 4; ++c) REQUIRE(y.at(c, a, b) == x.at(a, b, c));
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(3);
    auto x0 = rng.uniform_tensor<double>({2, 3, 3, 3}, -1, 1);
    const auto grad_of = [&](double a, double b) {
        Graph<double> g;
        Var x = g.parameter(x0, 0);
        Var f = g.sum(g.square(g.silu(x)));
        Var h = g.mean(g.abs(g.dft2(x)));
        return g.backward(g.add(g.scale(f, a), g.scale(h, b)));
    };
    const auto gf = grad_of(1, 0), gh = grad_of(0, 1), gc = grad_of(2.5, -0.5);
    for (std::size_t i = 0; i < gf.size(); ++i) REQUIRE(gc[i] == Catch::Approx(2.5 * gf[i] - 0.5 * gh[i]).margin(1e-12));
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Graph<double> g;
    Var x = g.parameter(Tensor<double>({1}, 3.0), 0);
    Var y = g.mul(x, x);  // d/dx x^2 = 6
    REQUIRE(g.backward(y)[0] == 6.0);
}

TEST_CASE("non-finite values are rejected at the producing op") {
    Graph<float> g;
    Var big = g.constant(Tensor<float>({1}, 3e38f));
    REQUIRE_THROWS_AS(g.scale(big, 10.0), NonFiniteError);
}

TEST_CASE("graph misuse is reported") {
    Graph<double> g;
    Var a = g.parameter(Tensor<double>({2}, 1.0), 0);
    REQUIRE_THROWS_AS(g.parameter(Tensor<double>({2}, 1.0), 0), std::invalid_argument);
    REQUIRE_THROWS_AS(g.backward(a), ShapeError);
    REQUIRE_THROWS_AS(g.add(a, g.constant(Tensor<double>({3}))), ShapeError);
    REQUIRE_THROWS_AS(g.permute(a, {0, 1}), ShapeError);
    REQUIRE_THROWS_AS(g.gate_mul(g.constant(Tensor<double>({1, 2, 2, 2})), g.constant(Tensor<double>({1, 3, 2, 2}))), ShapeError);
}
