#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "star/autograd.hpp"
#include "star/diffusion.hpp"
#include "star/frequency.hpp"
#include "star/tensor.hpp"

namespace star {

enum class BShape { linear, exponential };
enum class DfVariant { off, unified, inverse, direct };
enum class BandNorm { l1 };

struct LossConfig {
    double alpha_exp = 2.0;  // exponent of c(t)
    double beta = 1.0;       // scale of b(t)
    BShape b_shape = BShape::linear;
    DfVariant df_variant = DfVariant::direct;
    double rho = 0.25;
    BandNorm norm = BandNorm::l1;
    int t_max = 999;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;

    void validate() const {
        if (!(alpha_exp > 0.0)) throw std::invalid_argument("loss.alpha_exp must be > 0");
        if (!(beta >= 0.0)) throw std::invalid_argument("loss.beta must be >= 0");
        if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("loss.rho must lie in (0, 1]");
        if (t_max < 1) throw std::invalid_argument("loss.t_max must be >= 1");
    }
};

inline void check_loss_step(int t, const LossConfig& cfg) {
    if (t < 0 || t > cfg.t_max)
        throw std::out_of_range("step " + std::to_string(t) + " outside [0, " + std::to_string(cfg.t_max) + "]");
}

/// Mean squared error between predicted and target velocity.
template <class S>
double v_loss(const Tensor<S>& prediction, const Tensor<S>& target_v) {
    return mean_squared_error(prediction, target_v);
}

/// c(t) = (t / t_max)^alpha: weight of the low band in the direct variant.
inline double c_weight(int t, const LossConfig& cfg) {
    check_loss_step(t, cfg);
    return std::pow(static_cast<double>(t) / cfg.t_max, cfg.alpha_exp);
}

/// Balance between the velocity and frequency terms.
/// linear: beta (1 - t/t_max); exponential: beta (e^{1 - t/t_max} - 1)/(e - 1).
inline double b_weight(int t, const LossConfig& cfg) {
    check_loss_step(t, cfg);
    const double r = 1.0 - static_cast<double>(t) / cfg.t_max;
    if (cfg.b_shape == BShape::linear) return cfg.beta * r;
    return cfg.beta * (std::exp(r) - 1.0) / (std::numbers::e - 1.0);
}

struct BandWeights {
    double low = 0.0;
    double high = 0.0;
};

inline BandWeights band_weights(int t, const LossConfig& cfg) {
    const double c = c_weight(t, cfg);
    switch (cfg.df_variant) {
        case DfVariant::direct: return {c, 1.0 - c};
        case DfVariant::inverse: return {1.0 - c, c};
        case DfVariant::unified: return {1.0, 1.0};
        case DfVariant::off: return {0.0, 0.0};
    }
    return {};
}

struct DfTerms {
    double low = 0.0;   // L_LF
    double high = 0.0;  // L_HF
    double df = 0.0;    // weighted combination
};

/// Mean absolute difference over real and imaginary parts, normalized by the
/// full bin count so both bands share one denominator.
inline double band_l1(const Spectrum& a, const Spectrum& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.bins.size(); ++i)
        acc += std::abs(a.bins[i].real() - b.bins[i].real()) + std::abs(a.bins[i].imag() - b.bins[i].imag());
    return acc / (2.0 * static_cast<double>(a.bins.size()));
}

template <class S>
DfTerms df_terms(const Tensor<S>& x_hat, const Tensor<S>& x_h, int t, const LossConfig& cfg) {
    require_same_shape(x_hat.shape(), x_h.shape(), "df_loss");
    const auto psi = make_lowpass(x_h.dim(2), x_h.dim(3), cfg.rho);
    const auto pred = split_bands(x_hat, psi);
    const auto ref = split_bands(x_h, psi);
    DfTerms out;
    out.low = band_l1(pred.low, ref.low);
    out.high = band_l1(pred.high, ref.high);
    const auto w = band_weights(t, cfg);
    out.df = w.low * out.low + w.high * out.high;
    return out;
}

/// Dynamic frequency loss for the configured variant (0 when off).
template <class S>
double df_loss(const Tensor<S>& x_hat, const Tensor<S>& x_h, int t, const LossConfig& cfg) {
    return df_terms(x_hat, x_h, t, cfg).df;
}

// ---------------------------------------------------------------------------
// Differentiable construction.

/// Band mask expanded to the [T,C,H,W,2] layout produced by Graph::dft2.
template <class S>
Tensor<S> expanded_band_mask(const Shape& video_shape, const FilterMask& psi, bool low) {
    Shape s = video_shape;
    s.push_back(2);
    Tensor<S> m(s);
    const std::size_t plane = psi.height * psi.width;
    for (std::size_t i = 0; i < m.size() / 2; ++i) {
        const bool pass = psi.pass[i % plane] != 0;
        m[2 * i] = m[2 * i + 1] = (pass == low) ? S{1} : S{0};
    }
    return m;
}

struct DfVars {
    Var low;
    Var high;
    Var df;
};

template <class S>
DfVars build_df_loss(Graph<S>& g, Var x_hat, const Tensor<S>& x_h, int t, const LossConfig& cfg) {
    require_same_shape(g.value(x_hat).shape(), x_h.shape(), "df_loss");
    const auto psi = make_lowpass(x_h.dim(2), x_h.dim(3), cfg.rho);
    Var spec = g.dft2(x_hat);
    Var target = g.dft2(g.constant(x_h));
    Var diff = g.sub(spec, target);
    Var low = g.mean(g.abs(g.mul_const(diff, expanded_band_mask<S>(x_h.shape(), psi, true))));
    Var high = g.mean(g.abs(g.mul_const(diff, expanded_band_mask<S>(x_h.shape(), psi, false))));
    const auto w = band_weights(t, cfg);
    Var df = g.add(g.scale(low, w.low), g.scale(high, w.high));
    return {low, high, df};
}

struct LossVars {
    Var v;
    Var low;
    Var high;
    Var df;
    Var total;
    bool has_df = false;
};

/// L_v + b(t) L_DF(X_hat, X_H) with X_hat = alpha_t Z_t - sigma_t v_hat.
/// Decoding is the identity, so the recovered latent is the pixel-space video.
template <class S>
LossVars build_total_loss(Graph<S>& g, Var prediction, const Tensor<S>& z_t, const Tensor<S>& target_v,
                          const Tensor<S>& x_h, int t, const LossConfig& cfg, const NoiseSchedule& sched) {
    sched.check_step(t);
    LossVars out;
    out.v = g.mean(g.square(g.sub(prediction, g.constant(target_v))));
    if (cfg.df_variant == DfVariant::off) {
        out.total = out.v;
        return out;
    }
    Var x_hat = g.sub(g.constant(scaled(z_t, static_cast<S>(sched.a(t)))), g.scale(prediction, sched.s(t)));
    const DfVars df = build_df_loss(g, x_hat, x_h, t, cfg);
    out.low = df.low;
    out.high = df.high;
    out.df = df.df;
    out.has_df = true;
    out.total = g.add(out.v, g.scale(df.df, b_weight(t, cfg)));
    return out;
}

struct LossValues {
    double v = 0.0;
    double low = 0.0;
    double high = 0.0;
    double df = 0.0;
    double total = 0.0;
};

template <class S>
LossValues loss_values(const Graph<S>& g, const LossVars& vars) {
    LossValues out;
    out.v = static_cast<double>(g.scalar(vars.v));
    out.total = static_cast<double>(g.scalar(vars.total));
    if (vars.has_df) {
        out.low = static_cast<double>(g.scalar(vars.low));
        out.high = static_cast<double>(g.scalar(vars.high));
        out.df = static_cast<double>(g.scalar(vars.df));
    }
    return out;
}

/// Total objective for a fixed prediction, plus its gradient with respect to that prediction.
struct TotalLossResult {
    LossValues values;
    VideoTensor grad_prediction;
};

inline TotalLossResult total_loss(const VideoTensor& prediction, const NoisedSample& sample, const VideoTensor& x_h,
                                  const LossConfig& cfg, const NoiseSchedule& sched) {
    Graph<float> g;
    Var pred = g.parameter(prediction, 0);
    const auto vt = v_target(sample.z_h, sample.epsilon, sample.t, sched);
    const auto vars = build_total_loss(g, pred, sample.z_t, vt, x_h, sample.t, cfg, sched);
    auto grad = g.backward(vars.total, prediction.size());
    return {loss_values(g, vars), VideoTensor(prediction.shape(), std::move(grad))};
}

}  // namespace star
