#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "star/tensor.hpp"

namespace star {

inline constexpr double kPsnrCapDb = 100.0;

/// PSNR for signals with peak value 1, capped for (near-)identical inputs.
inline double psnr_from_mse(double mse) {
    if (mse < 1e-10) return kPsnrCapDb;
    return 10.0 * std::log10(1.0 / mse);
}

template <class S>
double psnr(const Tensor<S>& x, const Tensor<S>& ref) {
    return psnr_from_mse(mean_squared_error(x, ref));
}

/// Known displacement between consecutive frames: frame t+1 at p equals frame t at p - (dx, dy).
struct Motion {
    double dx = 0.0;
    double dy = 0.0;
    friend bool operator==(const Motion&, const Motion&) = default;
};

using MotionField = std::vector<Motion>;

namespace detail {

// Luminance as the per-pixel channel mean of frame t.
template <class S>
std::vector<double> luminance(const Tensor<S>& v, std::size_t t) {
    const std::size_t C = v.dim(1), H = v.dim(2), W = v.dim(3);
    std::vector<double> out(H * W, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) out[i] += static_cast<double>(v[(t * C + c) * H * W + i]);
    for (auto& o : out) o /= static_cast<double>(C);
    return out;
}

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const int r = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - r;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& x : w) x /= sum;
    return w;
}

// Separable "valid" filtering of an H x W image.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W,
                                        const std::vector<double>& k) {
    const std::size_t n = k.size();
    const std::size_t Wo = W - n + 1, Ho = H - n + 1;
    std::vector<double> tmp(H * Wo, 0.0);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += k[j] * img[y * W + x + j];
            tmp[y * Wo + x] = acc;
        }
    std::vector<double> out(Ho * Wo, 0.0);
    for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += k[j] * tmp[(y + j) * Wo + x];
            out[y * Wo + x] = acc;
        }
    return out;
}

}  // namespace detail

/// Single-scale SSIM on luminance with an 11x11 Gaussian window (sigma 1.5),
/// unit dynamic range, averaged over frames.
template <class S>
double ssim(const Tensor<S>& x, const Tensor<S>& ref) {
    require_rank(x.shape(), 4, "ssim");
    require_same_shape(x.shape(), ref.shape(), "ssim");
    constexpr int kWin = 11;
    const std::size_t T = x.dim(0), H = x.dim(2), W = x.dim(3);
    if (H < kWin || W < kWin) throw ShapeError("ssim: frames smaller than the 11x11 window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto win = detail::gaussian_window(kWin, 1.5);

    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const auto a = detail::luminance(x, t);
        const auto b = detail::luminance(ref, t);
        std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            aa[i] = a[i] * a[i];
            bb[i] = b[i] * b[i];
            ab[i] = a[i] * b[i];
        }
        const auto mu_a = detail::filter_valid(a, H, W, win);
        const auto mu_b = detail::filter_valid(b, H, W, win);
        const auto e_aa = detail::filter_valid(aa, H, W, win);
        const auto e_bb = detail::filter_valid(bb, H, W, win);
        const auto e_ab = detail::filter_valid(ab, H, W, win);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2.0 * mu_a[i] * mu_b[i] + C1) * (2.0 * cov + C2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2);
            acc += num / den;
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / static_cast<double>(T);
}

/// Bilinear sample of plane (t, c) at fractional position (y, x).
/// Returns false when any of the four taps falls outside the frame.
template <class S>
bool bilinear_sample(const Tensor<S>& v, std::size_t t, std::size_t c, double y, double x, double& out) {
    const std::size_t C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const double fy = std::floor(y), fx = std::floor(x);
    const double wy = y - fy, wx = x - fx;
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const long y1 = wy > 0.0 ? y0 + 1 : y0;
    const long x1 = wx > 0.0 ? x0 + 1 : x0;
    if (y0 < 0 || x0 < 0 || y1 >= static_cast<long>(H) || x1 >= static_cast<long>(W)) return false;
    const auto px = [&](long yy, long xx) {
        return static_cast<double>(v[((t * C + c) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)]);
    };
    out = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) + wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
    return true;
}

/// Mean squared error between frame t+1 and frame t warped by the known motion,
/// over in-bounds pixels, averaged over frame pairs. Raw value; reports scale it
/// by 1e3.
template <class S>
double warping_error(const Tensor<S>& video, const MotionField& motion) {
    require_rank(video.shape(), 4, "warping_error");
    const std::size_t T = video.dim(0), C = video.dim(1), H = video.dim(2), W = video.dim(3);
    if (motion.size() + 1 != T)
        throw ShapeError("warping_error: " + std::to_string(motion.size()) + " motion entries for " +
                         std::to_string(T) + " frames");
    if (T < 2) return 0.0;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    double warped = 0.0;
                    if (!bilinear_sample(video, t, c, static_cast<double>(y) - motion[t].dy,
                                         static_cast<double>(x) - motion[t].dx, warped))
                        continue;
                    const double d = static_cast<double>(video[((t + 1) * C + c) * H * W + y * W + x]) - warped;
                    acc += d * d;
                    ++count;
                }
        total += count ? acc / static_cast<double>(count) : 0.0;
    }
    return total / static_cast<double>(T - 1);
}

inline double warping_error_report(double raw) { return raw * 1e3; }

}  // namespace star
