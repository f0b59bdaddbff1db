#pragma once

// Forward kernels shared by the plain API and the autograd graph.
// Layout is always [N, C, H, W]; reductions accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "star/tensor.hpp"

namespace star {

enum class PoolKind { average, max };

namespace kernels {

template <class S>
Tensor<S> conv3x3(const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>& b) {
    require_rank(x.shape(), 4, "conv2d_3x3 input");
    require_rank(k.shape(), 4, "conv2d_3x3 kernel");
    require_rank(b.shape(), 1, "conv2d_3x3 bias");
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = k.dim(0);
    if (k.dim(1) != Cin || k.dim(2) != 3 || k.dim(3) != 3)
        throw ShapeError("conv2d_3x3: kernel " + shape_str(k.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    if (b.dim(0) != Cout) throw ShapeError("conv2d_3x3: bias length " + std::to_string(b.dim(0)) +
                                           " != output channels " + std::to_string(Cout));
    Tensor<S> out({N, Cout, H, W});
    std::vector<double> acc(H * W);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(b[co]));
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const S* src = &x[((n * Cin) + ci) * H * W];
                const S* ker = &k[(co * Cin + ci) * 9];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double w = static_cast<double>(ker[(dy + 1) * 3 + (dx + 1)]);
                        if (w == 0.0) continue;
                        const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? H - 1 : H;
                        const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? W - 1 : W;
                        for (std::size_t y = y0; y < y1; ++y) {
                            const S* row = src + (y + dy) * W;
                            double* dst = &acc[y * W];
                            for (std::size_t xx = x0; xx < x1; ++xx)
                                dst[xx] += w * static_cast<double>(row[xx + dx]);
                        }
                    }
            }
            S* o = &out[(n * Cout + co) * H * W];
            for (std::size_t i = 0; i < H * W; ++i) o[i] = static_cast<S>(acc[i]);
        }
    return out;
}

template <class S>
Tensor<S> channel_pool(const Tensor<S>& x, PoolKind kind) {
    require_rank(x.shape(), 4, "channel_pool");
    const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    Tensor<S> out({N, 1, x.dim(2), x.dim(3)});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < P; ++p) {
            if (kind == PoolKind::average) {
                double acc = 0.0;
                for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(x[(n * C + c) * P + p]);
                out[n * P + p] = static_cast<S>(acc / static_cast<double>(C));
            } else {
                S m = x[n * C * P + p];
                for (std::size_t c = 1; c < C; ++c) m = std::max(m, x[(n * C + c) * P + p]);
                out[n * P + p] = m;
            }
        }
    return out;
}

inline constexpr double kSigmoidClamp = 30.0;

/// Logistic function with the input clamped to [-30, 30]; the result is kept
/// strictly inside (0, 1) at the precision of S.
template <class S>
S sigmoid_scalar(S x) {
    const double z = std::clamp(static_cast<double>(x), -kSigmoidClamp, kSigmoidClamp);
    S s = static_cast<S>(1.0 / (1.0 + std::exp(-z)));
    if (s >= S{1}) s = std::nextafter(S{1}, S{0});
    if (s <= S{0}) s = std::numeric_limits<S>::min();
    return s;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> out = x;
    for (auto& v : out.vec()) v = sigmoid_scalar(v);
    return out;
}

}  // namespace kernels

/// Same-size 3x3 convolution with zero padding. Accepts [C,H,W] or [N,C,H,W].
template <class S>
Tensor<S> conv2d_3x3(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias) {
    if (input.rank() == 3) {
        auto out = kernels::conv3x3(input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)}), kernel, bias);
        return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
    }
    return kernels::conv3x3(input, kernel, bias);
}

/// Per-pixel reduction across channels. Accepts [C,H,W] or [N,C,H,W].
template <class S>
Tensor<S> channel_pool(const Tensor<S>& input, PoolKind kind) {
    if (input.rank() == 3) {
        auto out = kernels::channel_pool(input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)}), kind);
        return out.reshaped({1, input.dim(1), input.dim(2)});
    }
    return kernels::channel_pool(input, kind);
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& input) {
    return kernels::sigmoid(input);
}

}  // namespace star
