#pragma once

// Sampling, evaluation, band-PSNR trajectories and ablation sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/config.hpp"
#include "star/dataset.hpp"
#include "star/diffusion.hpp"
#include "star/frequency.hpp"
#include "star/io.hpp"
#include "star/metrics.hpp"
#include "star/network.hpp"
#include "star/train.hpp"

namespace star {

inline VelocityModel make_velocity_model(const DenoiserSpec& spec, const Params<float>& params,
                                         const ConditionSignal<float>& cond) {
    return [&spec, &params, &cond](const VideoTensor& z, int t) { return predict(spec, params, z, t, &cond); };
}

/// Model that knows the clean video and returns the exact velocity for any Z_t.
inline VelocityModel make_oracle_model(const VideoTensor& clean, const NoiseSchedule& sched) {
    return [clean, &sched](const VideoTensor& z, int t) {
        const double a = sched.a(t), s = sched.s(t);
        VideoTensor v(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double eps = (z[i] - a * clean[i]) / s;
            v[i] = static_cast<float>(a * eps - s * clean[i]);
        }
        return v;
    };
}

/// Held-out clips: same generator, disjoint seeds.
inline std::vector<TrainingExample> make_eval_set(const ExperimentConfig& cfg, std::size_t num_clips) {
    ToyDatasetConfig toy = cfg.dataset.toy;
    toy.num_clips = num_clips;
    DegradationConfig deg = cfg.degradation;
    deg.seed = cfg.degradation.seed + cfg.eval.seed_offset;
    return make_toy_dataset(toy, deg, cfg.seed + cfg.eval.seed_offset);
}

/// Sorted *.vtr files in `dir`.
inline std::vector<std::filesystem::path> list_tensor_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".vtr") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// HR clips from dataset.hr_dir. The LR partner is lr_dir/<stem>_lr.vtr when
/// lr_dir is set, otherwise it is synthesized. Motion is unknown (empty).
inline std::vector<TrainingExample> load_file_dataset(const ExperimentConfig& cfg) {
    std::vector<TrainingExample> out;
    const auto files = list_tensor_files(cfg.dataset.hr_dir);
    for (std::size_t i = 0; i < files.size(); ++i) {
        auto hr = read_tensor(files[i]);
        if (cfg.dataset.lr_dir.empty()) {
            out.push_back(make_example({std::move(hr), {}}, cfg.degradation, i));
            continue;
        }
        const auto lr_path = std::filesystem::path(cfg.dataset.lr_dir) / (files[i].stem().string() + "_lr.vtr");
        auto lr = read_tensor(lr_path);
        auto cond = make_condition(lr, hr.dim(2), hr.dim(3));
        out.push_back({std::move(hr), std::move(lr), {}, std::move(cond), {}});
    }
    return out;
}

inline std::vector<TrainingExample> make_train_set(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == "files") return load_file_dataset(cfg);
    return make_toy_dataset(cfg.dataset.toy, cfg.degradation, cfg.seed);
}

struct FreqRow {
    std::size_t index = 0;  // position in the sampling trajectory, 0 = noisiest
    int t = 0;
    double psnr_low = 0.0;
    double psnr_high = 0.0;
};

/// Band PSNR of every trajectory estimate against its clip's ground truth,
/// averaged over clips. Clip i samples with seed mix_seed(seed, i).
inline std::vector<FreqRow> analyze_freq(const std::vector<VelocityModel>& models, const std::vector<VideoTensor>& truths,
                                         const NoiseSchedule& sched, int num_steps, double rho, std::uint64_t seed) {
    if (models.size() != truths.size() || models.empty())
        throw std::invalid_argument("analyze_freq: need one model per ground-truth clip");
    const auto ts = sampling_steps(sched.t_max, num_steps);
    std::vector<FreqRow> rows(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) rows[k] = {k, ts[k], 0.0, 0.0};
    for (std::size_t c = 0; c < models.size(); ++c) {
        const auto& gt = truths[c];
        const auto psi = make_lowpass(gt.dim(2), gt.dim(3), rho);
        const auto traj = sample(models[c], gt.shape(), sched, num_steps, mix_seed(seed, c));
        for (std::size_t k = 0; k < traj.size(); ++k) {
            const auto bp = band_psnr(traj[k].clean_estimate, gt, psi);
            rows[k].psnr_low += bp.low / static_cast<double>(models.size());
            rows[k].psnr_high += bp.high / static_cast<double>(models.size());
        }
    }
    return rows;
}

inline std::vector<FreqRow> analyze_freq(const DenoiserSpec& spec, const Params<float>& params,
                                         const std::vector<TrainingExample>& clips, const NoiseSchedule& sched,
                                         int num_steps, double rho, std::uint64_t seed) {
    std::vector<VelocityModel> models;
    std::vector<VideoTensor> truths;
    for (const auto& ex : clips) {
        models.push_back(make_velocity_model(spec, params, ex.condition));
        truths.push_back(ex.hr);
    }
    return analyze_freq(models, truths, sched, num_steps, rho, seed);
}

/// First index whose value reaches `fraction` of the final value.
inline std::size_t first_reach_index(const std::vector<double>& curve, double fraction = 0.9) {
    if (curve.empty()) throw std::invalid_argument("first_reach_index: empty curve");
    const double target = fraction * curve.back();
    for (std::size_t i = 0; i < curve.size(); ++i)
        if (curve[i] >= target) return i;
    return curve.size() - 1;
}

inline void write_freq_csv(std::ostream& os, const std::vector<FreqRow>& rows) {
    os << "step,t,psnr_low,psnr_high\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%.6f,%.6f\n", r.index, r.t, r.psnr_low, r.psnr_high);
        os << buf;
    }
}

struct ClipMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double warp_x1e3 = 0.0;  // warping error scaled by 1e3
};

inline ClipMetrics measure(const VideoTensor& output, const VideoTensor& reference, const MotionField& motion) {
    VideoTensor clamped = output;
    for (auto& v : clamped.vec()) v = std::clamp(v, 0.0f, 1.0f);
    const double warp = motion.size() + 1 == output.dim(0)
                            ? warping_error_report(warping_error(clamped, motion))
                            : std::numeric_limits<double>::quiet_NaN();  // motion unknown
    return {psnr(clamped, reference), ssim(clamped, reference), warp};
}

/// Restores every clip from its LR conditioning and scores it against the HR clip.
inline std::vector<ClipMetrics> evaluate(const DenoiserSpec& spec, const Params<float>& params,
                                         const std::vector<TrainingExample>& clips, const NoiseSchedule& sched,
                                         int num_steps, std::uint64_t seed) {
    std::vector<ClipMetrics> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& ex = clips[i];
        const auto traj = sample(make_velocity_model(spec, params, ex.condition), ex.hr.shape(), sched, num_steps,
                                 mix_seed(seed, i));
        out.push_back(measure(traj.back().clean_estimate, ex.hr, ex.motion));
    }
    return out;
}

inline ClipMetrics mean_metrics(const std::vector<ClipMetrics>& m) {
    ClipMetrics out;
    for (const auto& x : m) {
        out.psnr += x.psnr / static_cast<double>(m.size());
        out.ssim += x.ssim / static_cast<double>(m.size());
        out.warp_x1e3 += x.warp_x1e3 / static_cast<double>(m.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ablations

enum class AblationAxis { liem_position, df_variant, alpha, beta, b_shape };

inline AblationAxis parse_axis(const std::string& s) {
    if (s == "liem_position") return AblationAxis::liem_position;
    if (s == "df_variant") return AblationAxis::df_variant;
    if (s == "alpha") return AblationAxis::alpha;
    if (s == "beta") return AblationAxis::beta;
    if (s == "b_shape") return AblationAxis::b_shape;
    throw std::invalid_argument("unknown ablation axis '" + s + "'");
}

struct AblationSetting {
    std::vector<std::string> labels;  // one per label column
    ExperimentConfig config;
};

struct AblationTable {
    std::vector<std::string> label_columns;
    std::vector<AblationSetting> settings;
    std::vector<ClipMetrics> results;
};

/// Settings laid out like the corresponding results table:
///   liem_position: none, (i) spa, (i) temp, (i) both, (ii) both, (iii) both
///   df_variant:    off, unified, inverse, direct
///   alpha:         linear x {0.25, 0.5, 1, 1.5, 2}, then exponential at 2
///   beta:          {0.25, 0.75, 1.0, 1.5, 2.0}
///   b_shape:       linear, exponential at the configured alpha
inline AblationTable ablation_settings(const ExperimentConfig& base, AblationAxis axis) {
    AblationTable tab;
    const auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    switch (axis) {
        case AblationAxis::liem_position: {
            tab.label_columns = {"position", "spa_local", "temp_local"};
            const struct { LiemPosition p; bool s, t; } rows[] = {
                {LiemPosition::none, false, false}, {LiemPosition::i, true, false}, {LiemPosition::i, false, true},
                {LiemPosition::i, true, true},      {LiemPosition::ii, true, true}, {LiemPosition::iii, true, true}};
            for (const auto& r : rows) {
                auto c = base;
                c.denoiser.liem = {r.p, r.s, r.t};
                tab.settings.push_back({{liem_position_name(r.p), r.s ? "1" : "0", r.t ? "1" : "0"}, c});
            }
            break;
        }
        case AblationAxis::df_variant: {
            tab.label_columns = {"df_variant", "separate", "type"};
            const struct { DfVariant v; const char *name, *sep, *type; } rows[] = {
                {DfVariant::off, "off", "-", "-"},
                {DfVariant::unified, "unified", "0", "-"},
                {DfVariant::inverse, "inverse", "1", "inverse"},
                {DfVariant::direct, "direct", "1", "direct"}};
            for (const auto& r : rows) {
                auto c = base;
                c.loss.df_variant = r.v;
                tab.settings.push_back({{r.name, r.sep, r.type}, c});
            }
            break;
        }
        case AblationAxis::alpha: {
            tab.label_columns = {"b_shape", "alpha"};
            for (double a : {0.25, 0.5, 1.0, 1.5, 2.0}) {
                auto c = base;
                c.loss.b_shape = BShape::linear;
                c.loss.alpha_exp = a;
                tab.settings.push_back({{"linear", fmt(a)}, c});
            }
            auto c = base;
            c.loss.b_shape = BShape::exponential;
            c.loss.alpha_exp = 2.0;
            tab.settings.push_back({{"exponential", "2"}, c});
            break;
        }
        case AblationAxis::beta: {
            tab.label_columns = {"beta"};
            for (double b : {0.25, 0.75, 1.0, 1.5, 2.0}) {
                auto c = base;
                c.loss.beta = b;
                tab.settings.push_back({{fmt(b)}, c});
            }
            break;
        }
        case AblationAxis::b_shape: {
            tab.label_columns = {"b_shape", "alpha"};
            for (auto shape : {BShape::linear, BShape::exponential}) {
                auto c = base;
                c.loss.b_shape = shape;
                tab.settings.push_back({{shape == BShape::linear ? "linear" : "exponential", fmt(c.loss.alpha_exp)}, c});
            }
            break;
        }
    }
    return tab;
}

/// Keeps only the settings whose first label appears in `keep` (empty keeps all).
inline void filter_settings(AblationTable& tab, const std::vector<std::string>& keep) {
    if (keep.empty()) return;
    std::vector<AblationSetting> kept;
    for (auto& s : tab.settings)
        for (const auto& k : keep)
            if (s.labels.back() == k || s.labels.front() == k) {
                kept.push_back(s);
                break;
            }
    if (kept.empty()) throw std::invalid_argument("ablation filter matched no settings");
    tab.settings = std::move(kept);
}

/// Train + evaluate one configuration on the toy data.
inline ClipMetrics train_and_evaluate(const ExperimentConfig& cfg) {
    const auto data = make_train_set(cfg);
    const auto result = train(cfg, data);
    const auto sched = build_schedule(cfg.schedule.t_max, cfg.schedule.kind);
    const auto eval_set = make_eval_set(cfg, cfg.eval.num_clips);
    return mean_metrics(evaluate(cfg.denoiser, result.params, eval_set, sched, cfg.sample.num_steps,
                                 cfg.seed + cfg.eval.seed_offset));
}

inline void run_ablation(AblationTable& tab) {
    tab.results.clear();
    for (const auto& s : tab.settings) tab.results.push_back(train_and_evaluate(s.config));
}

inline void write_ablation_csv(std::ostream& os, const AblationTable& tab) {
    for (const auto& c : tab.label_columns) os << c << ',';
    os << "psnr,ssim,warp_error_x1e3\n";
    char buf[128];
    for (std::size_t i = 0; i < tab.settings.size(); ++i) {
        for (const auto& l : tab.settings[i].labels) os << l << ',';
        const auto& m = tab.results.at(i);
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", m.psnr, m.ssim, m.warp_x1e3);
        os << buf;
    }
}

}  // namespace star
