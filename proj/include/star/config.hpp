#pragma once

// Experiment configuration and its canonical JSON form.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "star/dataset.hpp"
#include "star/degrade.hpp"
#include "star/diffusion.hpp"
#include "star/losses.hpp"
#include "star/network.hpp"

namespace star {

// Like NLOHMANN_JSON_SERIALIZE_ENUM, but unknown names are an error instead of the first value.
#define STAR_JSON_ENUM(E, ...)                                                                  \
    inline void to_json(nlohmann::json& j, const E& e) {                                        \
        static const std::pair<E, const char*> names[] = __VA_ARGS__;                           \
        for (const auto& [k, v] : names)                                                        \
            if (k == e) {                                                                       \
                j = v;                                                                          \
                return;                                                                         \
            }                                                                                   \
        throw std::invalid_argument("unnamed " #E " value");                                    \
    }                                                                                           \
    inline void from_json(const nlohmann::json& j, E& e) {                                      \
        static const std::pair<E, const char*> names[] = __VA_ARGS__;                           \
        const auto s = j.get<std::string>();                                                    \
        for (const auto& [k, v] : names)                                                        \
            if (s == v) {                                                                       \
                e = k;                                                                          \
                return;                                                                         \
            }                                                                                   \
        throw std::invalid_argument("unknown " #E " '" + s + "'");                              \
    }

STAR_JSON_ENUM(BShape, {{BShape::linear, "linear"}, {BShape::exponential, "exponential"}})
STAR_JSON_ENUM(DfVariant, {{DfVariant::off, "off"},
                                         {DfVariant::unified, "unified"},
                                         {DfVariant::inverse, "inverse"},
                                         {DfVariant::direct, "direct"}})
STAR_JSON_ENUM(BandNorm, {{BandNorm::l1, "l1"}})
STAR_JSON_ENUM(LiemPosition, {{LiemPosition::none, "none"},
                                            {LiemPosition::i, "i"},
                                            {LiemPosition::ii, "ii"},
                                            {LiemPosition::iii, "iii"}})
STAR_JSON_ENUM(ConditioningMode, {{ConditioningMode::none, "none"}, {ConditioningMode::lr_branch, "lr_branch"}})
STAR_JSON_ENUM(DegradeStage, {{DegradeStage::blur, "blur"},
                                            {DegradeStage::noise, "noise"},
                                            {DegradeStage::downsample, "downsample"},
                                            {DegradeStage::compress, "compress"}})
STAR_JSON_ENUM(ScheduleKind, {{ScheduleKind::cosine, "cosine"}})

struct ScheduleConfig {
    int t_max = 999;
    ScheduleKind kind = ScheduleKind::cosine;
    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct DatasetConfig {
    std::string kind = "toy";  // "toy" or "files"
    ToyDatasetConfig toy;
    std::string hr_dir;
    std::string lr_dir;
    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainConfig {
    int steps = 2000;
    double learning_rate = 1e-3;
    int batch_size = 1;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct SampleConfig {
    int num_steps = 50;
    friend bool operator==(const SampleConfig&, const SampleConfig&) = default;
};

struct EvalConfig {
    std::size_t num_clips = 8;
    std::uint64_t seed_offset = 1000003;  // held-out clips use seed + offset
    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
    ScheduleConfig schedule;
    LossConfig loss;
    DenoiserSpec denoiser;
    DegradationConfig degradation;
    DatasetConfig dataset;
    TrainConfig train;
    SampleConfig sample;
    EvalConfig eval;
    std::uint64_t seed = 0;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    void validate() const {
        if (schedule.t_max < 1) throw std::invalid_argument("schedule.t_max must be >= 1");
        if (loss.t_max != schedule.t_max) throw std::invalid_argument("loss.t_max must equal schedule.t_max");
        loss.validate();
        denoiser.validate();
        degradation.validate();
        if (dataset.kind != "toy" && dataset.kind != "files")
            throw std::invalid_argument("dataset.kind must be \"toy\" or \"files\"");
        if (train.steps < 0 || train.batch_size < 1 || !(train.learning_rate > 0))
            throw std::invalid_argument("train: steps >= 0, batch_size >= 1, learning_rate > 0 required");
        if (sample.num_steps < 1 || sample.num_steps > schedule.t_max)
            throw std::invalid_argument("sample.num_steps must lie in [1, t_max]");
    }
};

inline void to_json(nlohmann::json& j, const ScheduleConfig& c) { j = {{"t_max", c.t_max}, {"kind", c.kind}}; }
inline void from_json(const nlohmann::json& j, ScheduleConfig& c) {
    ScheduleConfig d;
    c.t_max = j.value("t_max", d.t_max);
    c.kind = j.value("kind", d.kind);
}

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = {{"alpha_exp", c.alpha_exp}, {"beta", c.beta},   {"b_shape", c.b_shape}, {"df_variant", c.df_variant},
         {"rho", c.rho},             {"norm", c.norm},   {"t_max", c.t_max}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
    LossConfig d;
    c.alpha_exp = j.value("alpha_exp", d.alpha_exp);
    c.beta = j.value("beta", d.beta);
    c.b_shape = j.value("b_shape", d.b_shape);
    c.df_variant = j.value("df_variant", d.df_variant);
    c.rho = j.value("rho", d.rho);
    c.norm = j.value("norm", d.norm);
    c.t_max = j.value("t_max", d.t_max);
}

inline void to_json(nlohmann::json& j, const LiemConfig& c) {
    j = {{"position", c.position}, {"spa_local", c.spa_local}, {"temp_local", c.temp_local}};
}
inline void from_json(const nlohmann::json& j, LiemConfig& c) {
    LiemConfig d;
    c.position = j.value("position", d.position);
    c.spa_local = j.value("spa_local", d.spa_local);
    c.temp_local = j.value("temp_local", d.temp_local);
}

inline void to_json(nlohmann::json& j, const DenoiserSpec& c) {
    j = {{"channels", c.channels},   {"width", c.width},       {"num_blocks", c.num_blocks},
         {"patch", c.patch},         {"time_features", c.time_features},
         {"liem", c.liem},           {"conditioning", c.conditioning}};
}
inline void from_json(const nlohmann::json& j, DenoiserSpec& c) {
    DenoiserSpec d;
    c.channels = j.value("channels", d.channels);
    c.width = j.value("width", d.width);
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.patch = j.value("patch", d.patch);
    c.time_features = j.value("time_features", d.time_features);
    c.liem = j.value("liem", d.liem);
    c.conditioning = j.value("conditioning", d.conditioning);
}

inline void to_json(nlohmann::json& j, const DegradationConfig& c) {
    j = {{"blur_sigma_min", c.blur_sigma_min}, {"blur_sigma_max", c.blur_sigma_max},
         {"noise_std_min", c.noise_std_min},   {"noise_std_max", c.noise_std_max},
         {"downscale", c.downscale},           {"quality_min", c.quality_min},
         {"quality_max", c.quality_max},       {"stages", c.stages},
         {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, DegradationConfig& c) {
    DegradationConfig d;
    c.blur_sigma_min = j.value("blur_sigma_min", d.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", d.blur_sigma_max);
    c.noise_std_min = j.value("noise_std_min", d.noise_std_min);
    c.noise_std_max = j.value("noise_std_max", d.noise_std_max);
    c.downscale = j.value("downscale", d.downscale);
    c.quality_min = j.value("quality_min", d.quality_min);
    c.quality_max = j.value("quality_max", d.quality_max);
    c.stages = j.value("stages", d.stages);
    c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const ToyDatasetConfig& c) {
    j = {{"num_clips", c.num_clips}, {"frames", c.frames}, {"height", c.height}, {"width", c.width},
         {"max_speed", c.max_speed}};
}
inline void from_json(const nlohmann::json& j, ToyDatasetConfig& c) {
    ToyDatasetConfig d;
    c.num_clips = j.value("num_clips", d.num_clips);
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.max_speed = j.value("max_speed", d.max_speed);
}

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
    j = {{"kind", c.kind}, {"toy", c.toy}, {"hr_dir", c.hr_dir}, {"lr_dir", c.lr_dir}};
}
inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
    DatasetConfig d;
    c.kind = j.value("kind", d.kind);
    c.toy = j.value("toy", d.toy);
    c.hr_dir = j.value("hr_dir", d.hr_dir);
    c.lr_dir = j.value("lr_dir", d.lr_dir);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"steps", c.steps}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.steps = j.value("steps", d.steps);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
}

inline void to_json(nlohmann::json& j, const SampleConfig& c) { j = {{"num_steps", c.num_steps}}; }
inline void from_json(const nlohmann::json& j, SampleConfig& c) { c.num_steps = j.value("num_steps", SampleConfig{}.num_steps); }

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = {{"num_clips", c.num_clips}, {"seed_offset", c.seed_offset}};
}
inline void from_json(const nlohmann::json& j, EvalConfig& c) {
    EvalConfig d;
    c.num_clips = j.value("num_clips", d.num_clips);
    c.seed_offset = j.value("seed_offset", d.seed_offset);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"schedule", c.schedule}, {"loss", c.loss},   {"denoiser", c.denoiser}, {"degradation", c.degradation},
         {"dataset", c.dataset},   {"train", c.train}, {"sample", c.sample},     {"eval", c.eval},
         {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    c.schedule = j.value("schedule", d.schedule);
    c.loss = j.value("loss", d.loss);
    // loss.t_max mirrors the schedule unless set explicitly
    if (!j.contains("loss") || !j.at("loss").contains("t_max")) c.loss.t_max = c.schedule.t_max;
    c.denoiser = j.value("denoiser", d.denoiser);
    c.degradation = j.value("degradation", d.degradation);
    c.dataset = j.value("dataset", d.dataset);
    c.train = j.value("train", d.train);
    c.sample = j.value("sample", d.sample);
    c.eval = j.value("eval", d.eval);
    c.seed = j.value("seed", d.seed);
}

/// Canonical document: sorted keys, two-space indent, trailing newline.
inline std::string serialize(const ExperimentConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c = nlohmann::json::parse(text).get<ExperimentConfig>();
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace star
