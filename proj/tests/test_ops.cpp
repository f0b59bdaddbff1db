#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "star/ops.hpp"
#include "star/rng.hpp"

using namespace star;

TEST_CASE("conv2d_3x3 matches nested loops") {
    Rng rng(1);
    for (auto [Ci, Co, H, W] : {std::tuple{1, 1, 3, 3}, {2, 3, 5, 7}, {4, 2, 8, 8}, {3, 1, 1, 6}}) {
        auto x = rng.uniform_tensor<double>({2, std::size_t(Ci), std::size_t(H), std::size_t(W)}, -1, 1);
        auto k = rng.uniform_tensor<double>({std::size_t(Co), std::size_t(Ci), 3, 3}, -1, 1);
        auto b = rng.uniform_tensor<double>({std::size_t(Co)}, -1, 1);
        REQUIRE(max_abs_diff(conv2d_3x3(x, k, b), oracle::conv3x3(x, k, b)) < 1e-12);
    }
}

TEST_CASE("conv2d_3x3 accepts a single [C,H,W] frame") {
    Rng rng(2);
    auto x = rng.uniform_tensor<float>({2, 6, 6});
    auto k = rng.uniform_tensor<float>({3, 2, 3, 3});
    auto b = rng.uniform_tensor<float>({3});
    const auto y = conv2d_3x3(x, k, b);
    REQUIRE(y.shape() == Shape{3, 6, 6});
    REQUIRE(max_abs_diff(y.reshaped({1, 3, 6, 6}), oracle::conv3x3(x.reshaped({1, 2, 6, 6}), k, b)) < 1e-5);
}

TEST_CASE("conv2d_3x3 rejects mismatched operands") {
    Tensor<float> x({1, 2, 4, 4}), k({3, 2, 3, 3}), b({3});
    REQUIRE_THROWS_AS(conv2d_3x3(x, Tensor<float>({3, 1, 3, 3}), b), ShapeError);
    REQUIRE_THROWS_AS(conv2d_3x3(x, Tensor<float>({3, 2, 5, 5}), b), ShapeError);
    REQUIRE_THROWS_AS(conv2d_3x3(x, k, Tensor<float>({2})), ShapeError);
    REQUIRE_THROWS_AS(conv2d_3x3(Tensor<float>({4, 4}), k, b), ShapeError);
}

TEST_CASE("channel pooling matches per-pixel loops") {
    Rng rng(3);
    auto x = rng.uniform_tensor<double>({2, 5, 3, 4}, -1, 1);
    const auto avg = channel_pool(x, PoolKind::average), mx = channel_pool(x, PoolKind::max);
    REQUIRE(avg.shape() == Shape{2, 1, 3, 4});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t xx = 0; xx < 4; ++xx) {
                double s = 0, m = -1e9;
                for (std::size_t c = 0; c < 5; ++c) {
                    s += x.at(n, c, y, xx);
                    m = std::max(m, x.at(n, c, y, xx));
                }
                REQUIRE(avg.at(n, 0, y, xx) == Catch::Approx(s / 5).epsilon(1e-14));
                REQUIRE(mx.at(n, 0, y, xx) == m);
            }
}

TEST_CASE("channel pooling on a [C,H,W] frame yields [1,H,W]") {
    Tensor<float> x({3, 2, 2}, 1.0f);
    REQUIRE(channel_pool(x, PoolKind::max).shape() == Shape{1, 2, 2});
}

TEST_CASE("sigmoid values, clamp, and open range") {
    REQUIRE(sigmoid(Tensor<double>({1}, 0.0))[0] == 0.5);
    REQUIRE(sigmoid(Tensor<double>({1}, 2.0))[0] == Catch::Approx(1.0 / (1.0 + std::exp(-2.0))));
    // clamped input: anything beyond the clamp equals the value at the clamp
    REQUIRE(sigmoid(Tensor<double>({1}, 1e4))[0] == sigmoid(Tensor<double>({1}, 30.0))[0]);
    const auto f = sigmoid(Tensor<float>({2}, std::vector<float>{1e30f, -1e30f}));
    REQUIRE(f[0] < 1.0f);
    REQUIRE(f[1] > 0.0f);
    REQUIRE(std::isfinite(f[0]));
}
