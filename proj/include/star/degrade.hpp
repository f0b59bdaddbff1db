#pragma once

// First-order synthetic degradation: blur -> noise -> downsample -> block-DCT
// compression, each stage mapping [0,1] video to [0,1] video.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

enum class DegradeStage { blur, noise, downsample, compress };

inline const char* stage_name(DegradeStage s) {
    switch (s) {
        case DegradeStage::blur: return "blur";
        case DegradeStage::noise: return "noise";
        case DegradeStage::downsample: return "downsample";
        case DegradeStage::compress: return "compress";
    }
    return "?";
}

struct DegradationConfig {
    double blur_sigma_min = 0.2;
    double blur_sigma_max = 2.0;
    double noise_std_min = 0.0;
    double noise_std_max = 0.05;
    int downscale = 4;
    int quality_min = 30;
    int quality_max = 95;
    std::vector<DegradeStage> stages{DegradeStage::blur, DegradeStage::noise, DegradeStage::downsample,
                                     DegradeStage::compress};
    std::uint64_t seed = 0;

    friend bool operator==(const DegradationConfig&, const DegradationConfig&) = default;

    void validate() const {
        if (blur_sigma_min < 0 || blur_sigma_max < blur_sigma_min) throw std::invalid_argument("degrade: bad blur sigma range");
        if (noise_std_min < 0 || noise_std_max < noise_std_min) throw std::invalid_argument("degrade: bad noise std range");
        if (downscale < 1) throw std::invalid_argument("degrade: downscale must be >= 1");
        if (quality_min < 1 || quality_max > 100 || quality_max < quality_min)
            throw std::invalid_argument("degrade: quality range must lie in [1, 100]");
    }
};

/// Parameters drawn for one clip.
struct DegradationParams {
    double blur_sigma = 0.0;
    double noise_std = 0.0;
    int quality = 100;
    std::uint64_t noise_seed = 0;

    friend bool operator==(const DegradationParams&, const DegradationParams&) = default;
};

/// Draws in fixed order: sigma, std, quality, noise seed.
inline DegradationParams sample_params(const DegradationConfig& cfg, std::uint64_t clip_seed) {
    Rng rng(clip_seed);
    DegradationParams p;
    p.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    p.noise_std = rng.uniform(cfg.noise_std_min, cfg.noise_std_max);
    p.quality = static_cast<int>(rng.uniform_int(cfg.quality_min, cfg.quality_max));
    p.noise_seed = mix_seed(clip_seed, 0x6e6f697365ULL);
    return p;
}

inline std::uint64_t clip_seed(std::uint64_t seed, std::uint64_t clip_index) { return mix_seed(seed, clip_index); }

/// Reflect without repeating the edge sample (dcba|abcd -> dcb|abcd).
inline std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * static_cast<long>(n) - 2;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

inline std::vector<double> gaussian_kernel(double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// Separable Gaussian, radius ceil(3 sigma), reflect padding. sigma = 0 is the identity.
inline VideoTensor gaussian_blur(const VideoTensor& video, double sigma) {
    require_rank(video.shape(), 4, "gaussian_blur");
    if (sigma < 0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return video;
    const auto k = gaussian_kernel(sigma);
    const long r = static_cast<long>(k.size() / 2);
    const std::size_t planes = video.dim(0) * video.dim(1), H = video.dim(2), W = video.dim(3);
    VideoTensor out(video.shape());
    std::vector<double> tmp(H * W);
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = &video[p * H * W];
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long j = -r; j <= r; ++j)
                    acc += k[static_cast<std::size_t>(j + r)] * src[y * W + reflect_index(static_cast<long>(x) + j, W)];
                tmp[y * W + x] = acc;
            }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long j = -r; j <= r; ++j)
                    acc += k[static_cast<std::size_t>(j + r)] * tmp[reflect_index(static_cast<long>(y) + j, H) * W + x];
                out[p * H * W + y * W + x] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    }
    return out;
}

/// Additive zero-mean Gaussian noise, clamped to [0, 1].
inline VideoTensor add_noise(const VideoTensor& video, double std, std::uint64_t seed) {
    if (std < 0) throw std::invalid_argument("add_noise: std must be >= 0");
    if (std == 0.0) return video;
    Rng rng(seed);
    VideoTensor out = video;
    for (auto& v : out.vec()) v = static_cast<float>(std::clamp(v + std * rng.normal(), 0.0, 1.0));
    return out;
}

/// Area-average pooling by an integer factor.
inline VideoTensor downsample(const VideoTensor& video, int factor) {
    require_rank(video.shape(), 4, "downsample");
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t H = video.dim(2), W = video.dim(3);
    if (H % f || W % f)
        throw ShapeError("downsample: factor " + std::to_string(factor) + " does not divide " + shape_str(video.shape()));
    if (f == 1) return video;
    const std::size_t planes = video.dim(0) * video.dim(1), h = H / f, w = W / f;
    VideoTensor out({video.dim(0), video.dim(1), h, w});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < f; ++dy)
                    for (std::size_t dx = 0; dx < f; ++dx) acc += video[p * H * W + (y * f + dy) * W + x * f + dx];
                out[(p * h + y) * w + x] = static_cast<float>(acc / static_cast<double>(f * f));
            }
    return out;
}

// JPEG luminance table, in 8-bit code values.
inline constexpr std::array<int, 64> kLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78,  87,  103, 121, 120, 101, 72, 92, 95, 98,  112, 100, 103, 99};

/// Quantizer step per coefficient (unit pixel range) at quality q, using the
/// libjpeg quality scaling without its minimum-step clamp, so q = 100 gives
/// step 0 (no quantization).
inline std::array<double, 64> quant_steps(int q) {
    if (q < 1 || q > 100) throw std::invalid_argument("compress_surrogate: quality must lie in [1, 100]");
    const double scale = q < 50 ? 5000.0 / q : 200.0 - 2.0 * q;
    std::array<double, 64> steps{};
    for (std::size_t i = 0; i < 64; ++i) steps[i] = kLumaQuant[i] * scale / 100.0 / 255.0;
    return steps;
}

/// Orthonormal 8-point DCT-II basis: basis[k][n].
inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> b{};
        for (std::size_t k = 0; k < 8; ++k)
            for (std::size_t n = 0; n < 8; ++n)
                b[k][n] = (k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                          std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / 16.0);
        return b;
    }();
    return basis;
}

/// Per-frame 8x8 block DCT quantization. Partial edge blocks are padded by
/// edge replication and cropped after reconstruction.
inline VideoTensor compress_surrogate(const VideoTensor& video, int q) {
    require_rank(video.shape(), 4, "compress_surrogate");
    const auto steps = quant_steps(q);
    if (q == 100) return video;
    const auto& B = dct8_basis();
    const std::size_t planes = video.dim(0) * video.dim(1), H = video.dim(2), W = video.dim(3);
    VideoTensor out(video.shape());
    std::array<double, 64> block{}, coef{}, tmp{};
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t by = 0; by < H; by += 8)
            for (std::size_t bx = 0; bx < W; bx += 8) {
                for (std::size_t y = 0; y < 8; ++y)
                    for (std::size_t x = 0; x < 8; ++x)
                        block[y * 8 + x] = video[p * H * W + std::min(by + y, H - 1) * W + std::min(bx + x, W - 1)];
                // rows then columns
                for (std::size_t y = 0; y < 8; ++y)
                    for (std::size_t k = 0; k < 8; ++k) {
                        double a = 0.0;
                        for (std::size_t n = 0; n < 8; ++n) a += B[k][n] * block[y * 8 + n];
                        tmp[y * 8 + k] = a;
                    }
                for (std::size_t k = 0; k < 8; ++k)
                    for (std::size_t x = 0; x < 8; ++x) {
                        double a = 0.0;
                        for (std::size_t n = 0; n < 8; ++n) a += B[k][n] * tmp[n * 8 + x];
                        coef[k * 8 + x] = a;
                    }
                for (std::size_t i = 0; i < 64; ++i)
                    if (steps[i] > 0.0) coef[i] = std::round(coef[i] / steps[i]) * steps[i];
                for (std::size_t n = 0; n < 8; ++n)
                    for (std::size_t x = 0; x < 8; ++x) {
                        double a = 0.0;
                        for (std::size_t k = 0; k < 8; ++k) a += B[k][n] * coef[k * 8 + x];
                        tmp[n * 8 + x] = a;
                    }
                for (std::size_t y = 0; y < 8 && by + y < H; ++y)
                    for (std::size_t n = 0; n < 8 && bx + n < W; ++n) {
                        double a = 0.0;
                        for (std::size_t k = 0; k < 8; ++k) a += B[k][n] * tmp[y * 8 + k];
                        out[p * H * W + (by + y) * W + bx + n] = static_cast<float>(std::clamp(a, 0.0, 1.0));
                    }
            }
    return out;
}

/// Apply the configured stages with explicit parameters.
inline VideoTensor degrade_with(const VideoTensor& x_h, const DegradationConfig& cfg, const DegradationParams& p) {
    VideoTensor x = x_h;
    for (auto stage : cfg.stages) {
        switch (stage) {
            case DegradeStage::blur: x = gaussian_blur(x, p.blur_sigma); break;
            case DegradeStage::noise: x = add_noise(x, p.noise_std, p.noise_seed); break;
            case DegradeStage::downsample: x = downsample(x, cfg.downscale); break;
            case DegradeStage::compress: x = compress_surrogate(x, p.quality); break;
        }
    }
    return x;
}

struct DegradedPair {
    VideoTensor x_l;
    VideoTensor x_h;
    DegradationParams params;
};

/// LR/HR pair for clip `clip_index`; parameters derive from (cfg.seed, clip_index).
inline DegradedPair make_pair(const VideoTensor& x_h, const DegradationConfig& cfg, std::uint64_t clip_index = 0) {
    cfg.validate();
    require_rank(x_h.shape(), 4, "make_pair");
    const auto f = static_cast<std::size_t>(cfg.downscale);
    if (x_h.dim(2) % f || x_h.dim(3) % f)
        throw ShapeError("make_pair: downscale " + std::to_string(cfg.downscale) + " does not divide " +
                         shape_str(x_h.shape()));
    const auto params = sample_params(cfg, clip_seed(cfg.seed, clip_index));
    return {degrade_with(x_h, cfg, params), x_h, params};
}

}  // namespace star
