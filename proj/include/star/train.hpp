#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/autograd.hpp"
#include "star/config.hpp"
#include "star/dataset.hpp"
#include "star/diffusion.hpp"
#include "star/losses.hpp"
#include "star/network.hpp"
#include "star/rng.hpp"

namespace star {

/// Adam with bias correction.
class Adam {
public:
    explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<float>& params, const std::vector<double>& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1 - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1 - b2_) * grad[i] * grad[i];
            params[i] -= static_cast<float>(lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

struct LossRow {
    int step = 0;
    double v = 0.0;
    double low = 0.0;
    double high = 0.0;
    double df = 0.0;
    double total = 0.0;

    friend bool operator==(const LossRow&, const LossRow&) = default;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    Params<float> params;
    std::vector<LossRow> rows;
};

inline constexpr std::uint64_t kInitSalt = 0x696e6974;   // "init"
inline constexpr std::uint64_t kTrainSalt = 0x747261696e; // "train"

/// Loss and parameter gradient for one example at step t with noise eps.
/// Gradients are summed into `grad`.
template <class S>
LossValues example_loss_and_grad(const DenoiserSpec& spec, const Params<S>& params, const Tensor<S>& hr,
                                 const ConditionSignal<S>& cond, int t, const Tensor<S>& eps, const LossConfig& loss,
                                 const NoiseSchedule& sched, std::vector<double>* grad) {
    const auto a = static_cast<S>(sched.a(t)), s = static_cast<S>(sched.s(t));
    const Tensor<S> z_t = axpby(a, hr, s, eps);
    const Tensor<S> v_t = axpby(a, eps, static_cast<S>(-s), hr);
    Graph<S> g;
    Binder<S> bind(g, params);
    Var pred = denoiser_forward(bind, spec, z_t, t, &cond);
    const auto vars = build_total_loss(g, pred, z_t, v_t, hr, t, loss, sched);
    if (grad) {
        const auto gr = g.backward(vars.total, params.values.size());
        for (std::size_t i = 0; i < gr.size(); ++i) (*grad)[i] += static_cast<double>(gr[i]);
    }
    return loss_values(g, vars);
}

/// Optimizes the total objective. Deterministic given cfg.seed.
/// `on_step` (optional) sees each logged row as it is produced.
inline TrainResult train(const ExperimentConfig& cfg, const std::vector<TrainingExample>& data,
                         const std::function<void(const LossRow&)>& on_step = {}) {
    cfg.validate();
    if (cfg.train.steps > 0 && data.empty()) throw std::invalid_argument("train: empty dataset");
    const auto sched = build_schedule(cfg.schedule.t_max, cfg.schedule.kind);
    TrainResult out{init_params<float>(cfg.denoiser, mix_seed(cfg.seed, kInitSalt)), {}};
    Adam opt(out.params.values.size(), cfg.train.learning_rate);
    Rng rng(mix_seed(cfg.seed, kTrainSalt));
    std::vector<double> grad(out.params.values.size());
    const double inv_batch = 1.0 / cfg.train.batch_size;

    for (int step = 1; step <= cfg.train.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        LossRow row{step};
        for (int b = 0; b < cfg.train.batch_size; ++b) {
            const auto& ex = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
            const int t = static_cast<int>(rng.uniform_int(1, cfg.schedule.t_max));
            const auto eps = rng.normal_tensor<float>(ex.hr.shape());
            LossValues lv;
            try {
                lv = example_loss_and_grad(cfg.denoiser, out.params, ex.hr, ex.condition, t, eps, cfg.loss, sched, &grad);
            } catch (const NonFiniteError& e) {
                throw TrainingDiverged("non-finite value at step " + std::to_string(step) + " (" + e.what() +
                                       ")\nconfig:\n" + serialize(cfg));
            }
            row.v += lv.v * inv_batch;
            row.low += lv.low * inv_batch;
            row.high += lv.high * inv_batch;
            row.df += lv.df * inv_batch;
            row.total += lv.total * inv_batch;
        }
        if (!std::isfinite(row.total))
            throw TrainingDiverged("loss is NaN/Inf at step " + std::to_string(step) + "\nconfig:\n" + serialize(cfg));
        for (auto& gv : grad) gv *= inv_batch;
        opt.step(out.params.values, grad);
        out.rows.push_back(row);
        if (on_step) on_step(row);
    }
    return out;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows) {
    os << "step,L_v,L_LF,L_HF,L_DF,total\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.v, r.low, r.high, r.df, r.total);
        os << buf;
    }
}

/// Mean of `total` over rows with step in (end - window, end].
inline double moving_average(const std::vector<LossRow>& rows, int end, int window) {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.step > end - window && r.step <= end) {
            acc += r.total;
            ++n;
        }
    if (n == 0) throw std::out_of_range("moving_average: no rows in window");
    return acc / n;
}

}  // namespace star
