#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

enum class ScheduleKind { cosine };

/// Variance-preserving schedule: alpha[t]^2 + sigma[t]^2 == 1 for t in [0, t_max].
struct NoiseSchedule {
    int t_max = 999;
    std::vector<double> alpha;
    std::vector<double> sigma;

    double a(int t) const { return alpha.at(static_cast<std::size_t>(t)); }
    double s(int t) const { return sigma.at(static_cast<std::size_t>(t)); }
    void check_step(int t) const {
        if (t < 0 || t > t_max)
            throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(t_max) + "]");
    }
};

/// Cosine schedule with offset s = 0.008: abar(t) = f(t)/f(0),
/// f(t) = cos^2(pi/2 * (t/t_max + s)/(1 + s)); alpha = sqrt(abar), sigma = sqrt(1 - abar).
inline NoiseSchedule build_schedule(int t_max = 999, ScheduleKind kind = ScheduleKind::cosine) {
    if (t_max < 1) throw std::invalid_argument("build_schedule: t_max must be >= 1");
    (void)kind;
    constexpr double s = 0.008;
    const auto f = [&](double t) {
        const double c = std::cos(0.5 * std::numbers::pi * (t / t_max + s) / (1.0 + s));
        return c * c;
    };
    NoiseSchedule out;
    out.t_max = t_max;
    out.alpha.resize(static_cast<std::size_t>(t_max) + 1);
    out.sigma.resize(out.alpha.size());
    const double f0 = f(0.0);
    for (int t = 0; t <= t_max; ++t) {
        const double abar = std::clamp(f(t) / f0, 0.0, 1.0);
        out.alpha[static_cast<std::size_t>(t)] = std::sqrt(abar);
        out.sigma[static_cast<std::size_t>(t)] = std::sqrt(1.0 - abar);
    }
    return out;
}

template <class S>
struct BasicNoisedSample {
    Tensor<S> z_t;
    int t = 0;
    Tensor<S> epsilon;
    Tensor<S> z_h;
};

using NoisedSample = BasicNoisedSample<float>;

/// Z_t = alpha_t Z_H + sigma_t eps.
template <class S>
BasicNoisedSample<S> noising(const Tensor<S>& z_h, int t, const Tensor<S>& epsilon, const NoiseSchedule& sched) {
    require_same_shape(z_h.shape(), epsilon.shape(), "noising");
    sched.check_step(t);
    const auto a = static_cast<S>(sched.a(t)), s = static_cast<S>(sched.s(t));
    return {axpby(a, z_h, s, epsilon), t, epsilon, z_h};
}

/// v_t = alpha_t eps - sigma_t Z_H.
template <class S>
Tensor<S> v_target(const Tensor<S>& z_h, const Tensor<S>& epsilon, int t, const NoiseSchedule& sched) {
    require_same_shape(z_h.shape(), epsilon.shape(), "v_target");
    sched.check_step(t);
    return axpby(static_cast<S>(sched.a(t)), epsilon, -static_cast<S>(sched.s(t)), z_h);
}

enum class RecoveryMode {
    noise_form,  // (alpha_t eps - v_hat) / sigma_t, needs the training noise
    standard,    // alpha_t Z_t - sigma_t v_hat
};

template <class S>
Tensor<S> recover_clean(const Tensor<S>& prediction, const BasicNoisedSample<S>& sample, const NoiseSchedule& sched,
                        RecoveryMode mode) {
    require_same_shape(prediction.shape(), sample.z_t.shape(), "recover_clean");
    sched.check_step(sample.t);
    const double a = sched.a(sample.t), s = sched.s(sample.t);
    Tensor<S> out(prediction.shape());
    if (mode == RecoveryMode::noise_form) {
        if (sample.t == 0 || s <= 0.0)
            throw std::domain_error("recover_clean: noise form divides by sigma_t, undefined at t = 0");
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<S>((a * sample.epsilon[i] - static_cast<double>(prediction[i])) / s);
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<S>(a * sample.z_t[i] - s * static_cast<double>(prediction[i]));
    }
    return out;
}

/// Velocity predictor: (Z_t, t) -> v_hat. Conditioning is captured by the callable.
using VelocityModel = std::function<VideoTensor(const VideoTensor& z_t, int t)>;

struct TrajectoryStep {
    int t = 0;
    VideoTensor clean_estimate;
};

/// Decreasing step indices t_max = ts[0] > ... > ts[n-1] >= 1 visited by the sampler.
inline std::vector<int> sampling_steps(int t_max, int num_steps) {
    if (num_steps < 1) throw std::invalid_argument("sample: num_steps must be >= 1");
    if (num_steps > t_max) throw std::invalid_argument("sample: num_steps exceeds t_max");
    std::vector<int> ts(static_cast<std::size_t>(num_steps));
    for (int i = 0; i < num_steps; ++i)
        ts[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(t_max - static_cast<double>(i) * t_max / num_steps));
    return ts;
}

/// Deterministic DDIM update driven by v-prediction. Starts from seeded
/// Gaussian noise; each step predicts (Z_H_hat, eps_hat) and re-noises to
/// the next step. The last element holds the output video.
inline std::vector<TrajectoryStep> sample(const VelocityModel& model, const Shape& shape, const NoiseSchedule& sched,
                                          int num_steps, std::uint64_t seed) {
    const auto ts = sampling_steps(sched.t_max, num_steps);
    Rng rng(seed);
    VideoTensor z = rng.normal_tensor<float>(shape);
    std::vector<TrajectoryStep> traj;
    traj.reserve(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const VideoTensor v = model(z, t);
        require_same_shape(v.shape(), z.shape(), "sample: model output");
        const double a = sched.a(t), s = sched.s(t);
        VideoTensor x0(shape), eps(shape);
        for (std::size_t k = 0; k < z.size(); ++k) {
            x0[k] = static_cast<float>(a * z[k] - s * v[k]);
            eps[k] = static_cast<float>(s * z[k] + a * v[k]);
        }
        const int t_next = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double an = sched.a(t_next), sn = sched.s(t_next);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = static_cast<float>(an * x0[k] + sn * eps[k]);
        traj.push_back({t, std::move(x0)});
    }
    return traj;
}

}  // namespace star
