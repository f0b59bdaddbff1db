#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "star/star.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace star;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON experiment config (defaults when omitted)");
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.degradation.seed = *c.seed;
    }
    cfg.validate();
    fs::create_directories(c.out);
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

json metrics_json(const ClipMetrics& m) {
    const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"psnr", num(m.psnr)}, {"ssim", num(m.ssim)}, {"warp_error_x1e3", num(m.warp_x1e3)}};
}

std::vector<TrainingExample> eval_clips(const ExperimentConfig& cfg, std::size_t n) {
    if (cfg.dataset.kind == "files") return load_file_dataset(cfg);
    return make_eval_set(cfg, n);
}

int run_degrade(const Common& c, const std::string& input) {
    const auto cfg = resolve(c);
    json clips = json::array();
    const auto files = list_tensor_files(input);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto hr = read_tensor(files[i]);
        const auto pair = make_pair(hr, cfg.degradation, i);
        const auto name = files[i].stem().string() + "_lr.vtr";
        write_tensor(fs::path(c.out) / name, pair.x_l);
        clips.push_back({{"index", i},
                         {"input", files[i].filename().string()},
                         {"output", name},
                         {"blur_sigma", pair.params.blur_sigma},
                         {"noise_std", pair.params.noise_std},
                         {"quality", pair.params.quality},
                         {"noise_seed", pair.params.noise_seed}});
    }
    const json manifest = {{"seed", cfg.degradation.seed},
                           {"downscale", cfg.degradation.downscale},
                           {"clips", clips}};
    write_text(fs::path(c.out) / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "degraded " << files.size() << " clip(s) into " << c.out << "\n";
    return 0;
}

int run_train(const Common& c, std::optional<int> steps) {
    auto cfg = resolve(c);
    if (steps) cfg.train.steps = *steps;
    cfg.validate();
    const auto data = make_train_set(cfg);
    const auto result = train(cfg, data, [&](const LossRow& r) {
        if (r.step % 100 == 0 || r.step == cfg.train.steps)
            std::fprintf(stderr, "step %d  total %.5f  L_v %.5f  L_DF %.5f\n", r.step, r.total, r.v, r.df);
    });
    write_checkpoint(fs::path(c.out) / "checkpoint.bin", cfg.denoiser, result.params);
    std::ofstream csv(fs::path(c.out) / "loss.csv", std::ios::binary | std::ios::trunc);
    write_loss_csv(csv, result.rows);
    write_text(fs::path(c.out) / "config.json", serialize(cfg));
    std::cout << "wrote " << (fs::path(c.out) / "checkpoint.bin").string() << "\n";
    return 0;
}

int run_sample(const Common& c, const std::string& checkpoint, const std::string& input, std::size_t clips) {
    const auto cfg = resolve(c);
    const auto params = read_checkpoint(checkpoint, cfg.denoiser);
    const auto sched = build_schedule(cfg.schedule.t_max, cfg.schedule.kind);
    const auto restore = [&](const ConditionSignal<float>& cond, const Shape& shape, std::uint64_t seed) {
        return sample(make_velocity_model(cfg.denoiser, params, cond), shape, sched, cfg.sample.num_steps, seed)
            .back()
            .clean_estimate;
    };
    if (!input.empty()) {
        const auto lr = read_tensor(input);
        const auto f = static_cast<std::size_t>(cfg.degradation.downscale);
        const Shape shape{lr.dim(0), lr.dim(1), lr.dim(2) * f, lr.dim(3) * f};
        const auto cond = make_condition(lr, shape[2], shape[3]);
        const auto out = fs::path(c.out) / (fs::path(input).stem().string() + "_sr.vtr");
        write_tensor(out, restore(cond, shape, cfg.seed));
        std::cout << "wrote " << out.string() << "\n";
        return 0;
    }
    const auto set = eval_clips(cfg, clips);
    for (std::size_t i = 0; i < set.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04zu_sr.vtr", i);
        write_tensor(fs::path(c.out) / name, restore(set[i].condition, set[i].hr.shape(), mix_seed(cfg.seed, i)));
    }
    std::cout << "restored " << set.size() << " clip(s) into " << c.out << "\n";
    return 0;
}

int run_eval(const Common& c, const std::string& checkpoint, std::optional<std::size_t> clips) {
    const auto cfg = resolve(c);
    const auto params = read_checkpoint(checkpoint, cfg.denoiser);
    const auto sched = build_schedule(cfg.schedule.t_max, cfg.schedule.kind);
    const auto set = eval_clips(cfg, clips.value_or(cfg.eval.num_clips));
    const auto per_clip = evaluate(cfg.denoiser, params, set, sched, cfg.sample.num_steps, cfg.seed + cfg.eval.seed_offset);
    const auto mean = mean_metrics(per_clip);

    std::ofstream csv(fs::path(c.out) / "metrics.csv", std::ios::binary | std::ios::trunc);
    csv << "clip,psnr,ssim,warp_error_x1e3\n";
    char buf[160];
    const auto row = [&](const std::string& label, const ClipMetrics& m) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", label.c_str(), m.psnr, m.ssim, m.warp_x1e3);
        csv << buf;
    };
    json clips_json = json::array();
    for (std::size_t i = 0; i < per_clip.size(); ++i) {
        row(std::to_string(i), per_clip[i]);
        auto j = metrics_json(per_clip[i]);
        j["clip"] = i;
        clips_json.push_back(j);
    }
    row("mean", mean);
    write_text(fs::path(c.out) / "metrics.json", json{{"clips", clips_json}, {"mean", metrics_json(mean)}}.dump(2) + "\n");
    std::printf("psnr %.4f  ssim %.4f  warp_x1e3 %.4f  (%zu clips)\n", mean.psnr, mean.ssim, mean.warp_x1e3, per_clip.size());
    return 0;
}

int run_analyze_freq(const Common& c, const std::string& checkpoint, std::size_t clips, std::optional<int> steps) {
    const auto cfg = resolve(c);
    const auto params = read_checkpoint(checkpoint, cfg.denoiser);
    const auto sched = build_schedule(cfg.schedule.t_max, cfg.schedule.kind);
    const auto set = eval_clips(cfg, clips);
    const auto rows = analyze_freq(cfg.denoiser, params, set, sched, steps.value_or(cfg.sample.num_steps), cfg.loss.rho,
                                   cfg.seed + cfg.eval.seed_offset);
    std::ofstream csv(fs::path(c.out) / "freq.csv", std::ios::binary | std::ios::trunc);
    write_freq_csv(csv, rows);
    std::vector<double> low, high;
    for (const auto& r : rows) {
        low.push_back(r.psnr_low);
        high.push_back(r.psnr_high);
    }
    std::printf("90%% of final reached at step %zu (low) and %zu (high)\n", first_reach_index(low), first_reach_index(high));
    return 0;
}

int run_ablate(const Common& c, const std::string& axis_name, const std::vector<std::string>& values,
               std::optional<int> steps, std::optional<std::size_t> clips) {
    auto cfg = resolve(c);
    if (steps) cfg.train.steps = *steps;
    if (clips) cfg.eval.num_clips = *clips;
    cfg.validate();
    auto tab = ablation_settings(cfg, parse_axis(axis_name));
    filter_settings(tab, values);
    for (const auto& s : tab.settings) {
        std::string label;
        for (const auto& l : s.labels) label += l + " ";
        std::fprintf(stderr, "training %s\n", label.c_str());
        tab.results.push_back(train_and_evaluate(s.config));
    }
    const auto path = fs::path(c.out) / ("ablation_" + axis_name + ".csv");
    std::ofstream csv(path, std::ios::binary | std::ios::trunc);
    write_ablation_csv(csv, tab);
    csv.close();
    std::ifstream in(path);
    std::cout << in.rdbuf();
    return 0;
}

int run_export(const Common& c, const std::string& input) {
    if (input.empty()) throw std::invalid_argument("export-frames needs --input <tensor file>");
    const auto files = export_frames(read_tensor(input), c.out);
    std::cout << "wrote " << files.size() << " frame(s) into " << c.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"star: spatial-temporal restoration toolkit for toy video super-resolution"};
    app.require_subcommand(1);

    Common degrade_c, train_c, sample_c, eval_c, freq_c, ablate_c, export_c;
    std::string input, checkpoint, axis;
    std::vector<std::string> values;
    std::optional<int> steps;
    std::optional<std::size_t> clips;

    auto* degrade = app.add_subcommand("degrade", "synthesize LR partners for a directory of HR tensor files");
    add_common(degrade, degrade_c);
    degrade->add_option("--input", input, "directory of HR .vtr files")->required();

    auto* train_cmd = app.add_subcommand("train", "train the denoiser; writes checkpoint.bin and loss.csv");
    add_common(train_cmd, train_c);
    train_cmd->add_option("--steps", steps, "overrides train.steps");

    auto* sample_cmd = app.add_subcommand("sample", "restore LR clips with a trained checkpoint");
    add_common(sample_cmd, sample_c);
    sample_cmd->add_option("--checkpoint", checkpoint)->required();
    sample_cmd->add_option("--input", input, "LR .vtr file (default: held-out toy clips)");
    std::size_t sample_clips = 1;
    sample_cmd->add_option("--clips", sample_clips, "held-out clips to restore")->capture_default_str();

    auto* eval_cmd = app.add_subcommand("eval", "PSNR, SSIM and warping error on held-out clips");
    add_common(eval_cmd, eval_c);
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--clips", clips, "overrides eval.num_clips");

    auto* freq = app.add_subcommand("analyze-freq", "band PSNR along the sampling trajectory");
    add_common(freq, freq_c);
    freq->add_option("--checkpoint", checkpoint)->required();
    std::size_t freq_clips = 20;
    freq->add_option("--clips", freq_clips, "clips to average over")->capture_default_str();
    freq->add_option("--steps", steps, "sampling steps (default sample.num_steps)");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate one table of settings");
    add_common(ablate, ablate_c);
    ablate->add_option("--axis", axis, "liem_position | df_variant | alpha | beta | b_shape")
        ->required()
        ->check(CLI::IsMember({"liem_position", "df_variant", "alpha", "beta", "b_shape"}));
    ablate->add_option("--values", values, "keep only rows with these labels");
    ablate->add_option("--steps", steps, "overrides train.steps");
    ablate->add_option("--clips", clips, "overrides eval.num_clips");

    auto* exp = app.add_subcommand("export-frames", "write one PPM per frame of a tensor file");
    add_common(exp, export_c);
    exp->add_option("--input", input, "tensor file")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (degrade->parsed()) return run_degrade(degrade_c, input);
        if (train_cmd->parsed()) return run_train(train_c, steps);
        if (sample_cmd->parsed()) return run_sample(sample_c, checkpoint, input, sample_clips);
        if (eval_cmd->parsed()) return run_eval(eval_c, checkpoint, clips);
        if (freq->parsed()) return run_analyze_freq(freq_c, checkpoint, freq_clips, steps);
        if (ablate->parsed()) return run_ablate(ablate_c, axis, values, steps, clips);
        if (exp->parsed()) return run_export(export_c, input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
