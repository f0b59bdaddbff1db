#pragma once

// Synthetic moving-texture clips with ground-truth motion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "star/degrade.hpp"
#include "star/metrics.hpp"
#include "star/network.hpp"
#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

struct ToyDatasetConfig {
    std::size_t num_clips = 16;
    std::size_t frames = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    double max_speed = 1.5;  // pixels per frame along each axis

    friend bool operator==(const ToyDatasetConfig&, const ToyDatasetConfig&) = default;
};

struct Clip {
    VideoTensor hr;
    MotionField motion;
};

/// A clip whose frame t samples a fixed scene at (x - t dx, y - t dy):
/// two oriented sinusoidal gratings plus a soft-edged disk, per-channel colors.
inline Clip make_toy_clip(const ToyDatasetConfig& cfg, std::uint64_t seed, bool integer_motion = false) {
    Rng rng(seed);
    struct Grating {
        double kx, ky, phase;
        double amp[3];
    };
    Grating gr[2];
    for (auto& g : gr) {
        const double freq = rng.uniform(0.05, 0.35) * 2.0 * std::numbers::pi;
        const double theta = rng.uniform(0.0, std::numbers::pi);
        g.kx = freq * std::cos(theta);
        g.ky = freq * std::sin(theta);
        g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (double& a : g.amp) a = rng.uniform(0.05, 0.2);
    }
    double base[3], disk_color[3];
    for (double& b : base) b = rng.uniform(0.35, 0.65);
    for (double& c : disk_color) c = rng.uniform(-0.3, 0.3);
    const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(cfg.width);
    const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(cfg.height);
    const double radius = rng.uniform(0.12, 0.25) * static_cast<double>(std::min(cfg.width, cfg.height));
    double dx = rng.uniform(-cfg.max_speed, cfg.max_speed);
    double dy = rng.uniform(-cfg.max_speed, cfg.max_speed);
    if (integer_motion) {
        dx = std::round(dx);
        dy = std::round(dy);
    }

    Clip clip{VideoTensor({cfg.frames, 3, cfg.height, cfg.width}), MotionField(cfg.frames - 1, Motion{dx, dy})};
    for (std::size_t t = 0; t < cfg.frames; ++t)
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                const double sx = static_cast<double>(x) - dx * static_cast<double>(t);
                const double sy = static_cast<double>(y) - dy * static_cast<double>(t);
                const double r = std::hypot(sx - cx, sy - cy);
                const double disk = 1.0 / (1.0 + std::exp((r - radius) * 1.5));
                for (std::size_t c = 0; c < 3; ++c) {
                    double v = base[c] + disk * disk_color[c];
                    for (const auto& g : gr) v += g.amp[c] * std::sin(g.kx * sx + g.ky * sy + g.phase);
                    clip.hr.at(t, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    return clip;
}

/// A degraded training example: HR target, its LR counterpart, and c_l.
struct TrainingExample {
    VideoTensor hr;
    VideoTensor lr;
    MotionField motion;
    ConditionSignal<float> condition;
    DegradationParams degradation;
};

inline TrainingExample make_example(Clip clip, const DegradationConfig& deg, std::uint64_t clip_index) {
    auto pair = make_pair(clip.hr, deg, clip_index);
    auto cond = make_condition(pair.x_l, clip.hr.dim(2), clip.hr.dim(3));
    return {std::move(clip.hr), std::move(pair.x_l), std::move(clip.motion), std::move(cond), pair.params};
}

/// Clip seeds derive from (seed, index) so subsets are stable as num_clips grows.
inline std::vector<TrainingExample> make_toy_dataset(const ToyDatasetConfig& cfg, const DegradationConfig& deg,
                                                     std::uint64_t seed) {
    std::vector<TrainingExample> out;
    out.reserve(cfg.num_clips);
    for (std::size_t i = 0; i < cfg.num_clips; ++i)
        out.push_back(make_example(make_toy_clip(cfg, mix_seed(seed, i)), deg, i));
    return out;
}

}  // namespace star
