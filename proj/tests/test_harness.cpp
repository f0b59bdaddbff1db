#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "star/star.hpp"

namespace fs = std::filesystem;
using namespace star;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("star_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(STAR_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    return std::system(cmd.c_str());
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.dataset.toy.num_clips = 2;
    c.dataset.toy.frames = 2;
    c.dataset.toy.height = c.dataset.toy.width = 16;
    c.denoiser.width = 4;
    c.denoiser.num_blocks = 2;
    c.train.steps = 3;
    c.sample.num_steps = 2;
    c.eval.num_clips = 1;
    return c;
}

}  // namespace

TEST_CASE("tensor file round-trip is bit exact") {
    Rng rng(1);
    auto t = rng.normal_tensor<float>({2, 3, 4, 5});
    t[0] = -0.0f;
    t[1] = 1e-40f;  // subnormal
    const auto dir = scratch("tensor");
    write_tensor(dir / "a.vtr", t);
    const auto back = read_tensor(dir / "a.vtr");
    REQUIRE(back.shape() == t.shape());
    REQUIRE(std::memcmp(back.vec().data(), t.vec().data(), 4 * t.size()) == 0);
    REQUIRE(fs::file_size(dir / "a.vtr") == 20 + 4 * t.size());
}

TEST_CASE("malformed tensor files name the path and byte offset") {
    const auto bytes = encode_tensor(VideoTensor({1, 1, 2, 2}, 0.5f));
    const auto expect = [](std::vector<unsigned char> b, std::size_t offset) {
        try {
            decode_tensor(b, "clip.vtr");
            FAIL("no error");
        } catch (const FormatError& e) {
            REQUIRE(e.offset() == offset);
            REQUIRE(std::string(e.what()).find("clip.vtr") != std::string::npos);
        }
    };
    auto bad_magic = bytes;
    bad_magic[1] = 'X';
    expect(bad_magic, 0);
    expect(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 10), 8);  // truncated in the second extent
    auto short_payload = bytes;
    short_payload.pop_back();
    expect(short_payload, 20);
    auto zero = bytes;
    zero[8] = 0;
    expect(zero, 8);
}

TEST_CASE("checkpoints round-trip and refuse a different spec") {
    DenoiserSpec spec;
    const auto p = init_params<float>(spec, 5);
    const auto dir = scratch("ckpt");
    write_checkpoint(dir / "c.bin", spec, p);
    REQUIRE(read_checkpoint(dir / "c.bin", spec).values == p.values);
    auto other = spec;
    other.liem.position = LiemPosition::iii;
    REQUIRE_THROWS_AS(read_checkpoint(dir / "c.bin", other), FormatError);
}

TEST_CASE("config round-trip is the identity") {
    ExperimentConfig c;
    REQUIRE(parse_config(serialize(c)) == c);
    c.seed = 123456789012345ULL;
    c.loss.alpha_exp = 1.5;
    c.loss.b_shape = BShape::exponential;
    c.loss.df_variant = DfVariant::inverse;
    c.denoiser.liem = {LiemPosition::ii, false, true};
    c.degradation.stages = {DegradeStage::noise, DegradeStage::downsample};
    c.dataset.kind = "files";
    c.dataset.hr_dir = "hr";
    c.train.learning_rate = 3.25e-4;
    REQUIRE(parse_config(serialize(c)) == c);
    REQUIRE(serialize(parse_config(serialize(c))) == serialize(c));
}

TEST_CASE("partial configs take defaults; invalid ones are rejected") {
    const auto c = parse_config(R"({"seed": 9, "schedule": {"t_max": 500}})");
    REQUIRE(c.seed == 9);
    REQUIRE(c.loss.t_max == 500);
    REQUIRE(c.train == TrainConfig{});
    REQUIRE_THROWS(parse_config(R"({"loss": {"df_variant": "sideways"}})"));
    REQUIRE_THROWS_AS(parse_config(R"({"loss": {"rho": 2.0}})"), std::invalid_argument);
    REQUIRE_THROWS(parse_config("{not json"));
}

TEST_CASE("PPM export: black, white, and re-import within one code value") {
    const auto dir = scratch("ppm");
    const auto files = export_frames(VideoTensor({2, 3, 4, 5}, 0.0f), dir / "black");
    REQUIRE(files.size() == 2);
    const auto black = read_ppm(files[0]);
    for (float v : black.vec()) REQUIRE(v == 0.0f);
    const auto white = read_ppm(export_frames(VideoTensor({1, 3, 4, 5}, 1.0f), dir / "white")[0]);
    for (float v : white.vec()) REQUIRE(v == 1.0f);
    Rng rng(2);
    auto x = rng.uniform_tensor<float>({1, 3, 6, 7});
    const auto back = read_ppm(export_frames(x, dir / "rand")[0]);
    REQUIRE(max_abs_diff(back, x) <= 1.0 / 255.0);
    REQUIRE_THROWS_AS(export_frames(VideoTensor({1, 1, 4, 4}), dir / "gray"), ShapeError);
}

TEST_CASE("zero training steps returns the initialization") {
    auto c = tiny_config();
    c.train.steps = 0;
    const auto r = train(c, make_train_set(c));
    REQUIRE(r.rows.empty());
    REQUIRE(r.params.values == init_params<float>(c.denoiser, mix_seed(c.seed, kInitSalt)).values);
}

TEST_CASE("training is deterministic and logs every step") {
    const auto c = tiny_config();
    const auto data = make_train_set(c);
    const auto a = train(c, data), b = train(c, data);
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.params.values == b.params.values);
    REQUIRE(a.rows.size() == 3);
    std::ostringstream os;
    write_loss_csv(os, a.rows);
    REQUIRE(os.str().rfind("step,L_v,L_LF,L_HF,L_DF,total\n1,", 0) == 0);
}

TEST_CASE("a non-finite loss aborts with the step number and a config echo") {
    const auto c = tiny_config();
    auto data = make_train_set(c);
    for (auto& ex : data) ex.hr[0] = std::nanf("");
    try {
        train(c, data);
        FAIL("no error");
    } catch (const TrainingDiverged& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("step 1") != std::string::npos);
        REQUIRE(msg.find("\"learning_rate\"") != std::string::npos);
    }
}

TEST_CASE("moving average windows") {
    std::vector<LossRow> rows;
    for (int s = 1; s <= 10; ++s) rows.push_back({s, 0, 0, 0, 0, double(s)});
    REQUIRE(moving_average(rows, 10, 4) == Catch::Approx(8.5));
    REQUIRE(moving_average(rows, 2, 50) == Catch::Approx(1.5));
    REQUIRE_THROWS_AS(moving_average(rows, 0, 5), std::out_of_range);
}

TEST_CASE("first-reach index") {
    REQUIRE(first_reach_index({1, 5, 9, 10}) == 2);
    REQUIRE(first_reach_index({10, 10}) == 0);
    REQUIRE_THROWS_AS(first_reach_index({}), std::invalid_argument);
}

TEST_CASE("frequency analysis with the exact model sits at the cap") {
    const auto sched = build_schedule(999);
    const auto clip = make_toy_clip({2, 2, 16, 16, 1.0}, 3);
    const auto rows = analyze_freq({make_oracle_model(clip.hr, sched)}, {clip.hr}, sched, 4, 0.25, 1);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        REQUIRE(r.psnr_low > 90.0);
        REQUIRE(r.psnr_high > 90.0);
    }
    REQUIRE(analyze_freq({make_oracle_model(clip.hr, sched)}, {clip.hr}, sched, 1, 0.25, 1).size() == 1);
}

TEST_CASE("ablation layouts mirror the result tables") {
    const ExperimentConfig base;
    const auto liem = ablation_settings(base, AblationAxis::liem_position);
    REQUIRE(liem.label_columns == std::vector<std::string>{"position", "spa_local", "temp_local"});
    REQUIRE(liem.settings.size() == 6);
    REQUIRE(liem.settings[0].config.denoiser.liem.position == LiemPosition::none);
    REQUIRE(liem.settings[4].labels == std::vector<std::string>{"ii", "1", "1"});
    const auto df = ablation_settings(base, AblationAxis::df_variant);
    REQUIRE(df.settings.size() == 4);
    REQUIRE(df.settings[3].config.loss.df_variant == DfVariant::direct);
    const auto alpha = ablation_settings(base, AblationAxis::alpha);
    REQUIRE(alpha.settings.size() == 6);
    REQUIRE(alpha.settings[1].config.loss.alpha_exp == 0.5);
    REQUIRE(alpha.settings[5].config.loss.b_shape == BShape::exponential);
    REQUIRE(ablation_settings(base, AblationAxis::beta).settings.size() == 5);
    REQUIRE(ablation_settings(base, AblationAxis::b_shape).settings.size() == 2);
    REQUIRE_THROWS_AS(parse_axis("gamma"), std::invalid_argument);
}

TEST_CASE("a single-setting ablation equals a plain train and evaluate") {
    const auto c = tiny_config();
    auto tab = ablation_settings(c, AblationAxis::df_variant);
    filter_settings(tab, {"direct"});
    REQUIRE(tab.settings.size() == 1);
    run_ablation(tab);
    const auto plain = train_and_evaluate(c);
    REQUIRE(tab.results[0].psnr == plain.psnr);
    REQUIRE(tab.results[0].ssim == plain.ssim);
    std::ostringstream os;
    write_ablation_csv(os, tab);
    REQUIRE(os.str().rfind("df_variant,separate,type,psnr,ssim,warp_error_x1e3\ndirect,1,direct,", 0) == 0);
}

TEST_CASE("cli degrade: empty input gives an empty manifest") {
    const auto dir = scratch("cli_empty");
    fs::create_directories(dir / "in");
    REQUIRE(run_cli("degrade --input " + (dir / "in").string() + " --out " + (dir / "out").string() + " --seed 4",
                    dir / "log") == 0);
    const auto m = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    REQUIRE(m["seed"] == 4);
    REQUIRE(m["clips"].empty());
}

TEST_CASE("cli degrade: manifest matches replayed parameters and outputs are reproducible") {
    const auto dir = scratch("cli_degrade");
    fs::create_directories(dir / "in");
    for (int i = 0; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip%02d.vtr", i);
        write_tensor(dir / "in" / name, make_toy_clip({2, 2, 16, 16, 1.0}, std::uint64_t(i)).hr);
    }
    const std::string args = "degrade --input " + (dir / "in").string() + " --seed 21 --out ";
    REQUIRE(run_cli(args + (dir / "a").string(), dir / "log") == 0);
    REQUIRE(run_cli(args + (dir / "b").string(), dir / "log") == 0);
    const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    REQUIRE(m["clips"].size() == 10);
    DegradationConfig cfg;
    cfg.seed = 21;
    for (std::size_t i = 0; i < 10; ++i) {
        const auto p = sample_params(cfg, clip_seed(21, i));
        const auto& e = m["clips"][i];
        REQUIRE(e["blur_sigma"].get<double>() == p.blur_sigma);
        REQUIRE(e["noise_std"].get<double>() == p.noise_std);
        REQUIRE(e["quality"].get<int>() == p.quality);
        const auto out = e["output"].get<std::string>();
        REQUIRE(slurp(dir / "a" / out) == slurp(dir / "b" / out));
    }
    REQUIRE(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
}

TEST_CASE("cli degrade: a malformed input names the file and byte offset") {
    const auto dir = scratch("cli_bad");
    fs::create_directories(dir / "in");
    auto bytes = encode_tensor(VideoTensor({1, 3, 8, 8}, 0.1f));
    bytes.resize(30);
    std::ofstream(dir / "in" / "broken.vtr", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 30);
    REQUIRE(run_cli("degrade --input " + (dir / "in").string() + " --out " + (dir / "out").string(), dir / "log") != 0);
    const auto log = slurp(dir / "log");
    REQUIRE(log.find("broken.vtr") != std::string::npos);
    REQUIRE(log.find("byte 20") != std::string::npos);
}

TEST_CASE("cli train, eval, analyze-freq, sample and export-frames") {
    const auto dir = scratch("cli_train");
    auto c = tiny_config();
    {
        std::ofstream(dir / "cfg.json") << serialize(c);
    }
    const std::string common = " --config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string();
    REQUIRE(run_cli("train" + common, dir / "log") == 0);
    REQUIRE(fs::exists(dir / "run" / "checkpoint.bin"));
    const auto csv = slurp(dir / "run" / "loss.csv");
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);
    const std::string ck = " --checkpoint " + (dir / "run" / "checkpoint.bin").string();
    REQUIRE(run_cli("eval" + common + ck, dir / "log") == 0);
    const auto m = nlohmann::json::parse(slurp(dir / "run" / "metrics.json"));
    REQUIRE(m["clips"].size() == 1);
    REQUIRE(slurp(dir / "run" / "metrics.csv").rfind("clip,psnr,ssim,warp_error_x1e3\n", 0) == 0);
    REQUIRE(run_cli("analyze-freq --steps 1 --clips 1" + common + ck, dir / "log") == 0);
    const auto freq = slurp(dir / "run" / "freq.csv");
    REQUIRE(std::count(freq.begin(), freq.end(), '\n') == 2);
    REQUIRE(run_cli("sample" + common + ck, dir / "log") == 0);
    REQUIRE(fs::exists(dir / "run" / "clip_0000_sr.vtr"));
    REQUIRE(run_cli("export-frames --input " + (dir / "run" / "clip_0000_sr.vtr").string() + " --out " +
                        (dir / "frames").string(),
                    dir / "log") == 0);
    REQUIRE(fs::exists(dir / "frames" / "frame_0001.ppm"));
    REQUIRE(run_cli("ablate --axis nope" + common, dir / "log") != 0);
}
