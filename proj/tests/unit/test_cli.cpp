#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "commands.hpp"
#include "fixtures.hpp"
#include "sgz/log.hpp"
#include "sgz/metrics.hpp"

using namespace sgz;
using namespace sgz::cli;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path dark_fixture(const std::string& name, int count, int size) {
  const auto dir = sgz::testing::scratch_dir(name);
  std::vector<ImageTensor> dark;
  for (const auto& img : sgz::testing::synthetic_scenes(count, size, size, 21)) dark.push_back(gamma_darken(img, 3.0));
  sgz::testing::write_pngs(dark, dir / "data", "img_%03d.png");
  return dir;
}

TrainOptions quick_train(const fs::path& dir, const std::string& out) {
  TrainOptions opt;
  opt.data = dir / "data";
  opt.out = dir / out;
  opt.size = 16;
  opt.train.epochs = 2;
  opt.train.batch = 2;
  opt.train.lr = 1e-3;
  opt.train.seed = 3;
  opt.train.sem_enabled = false;
  return opt;
}

fs::path zero_checkpoint(const fs::path& dir) {
  const fs::path p = dir / "zero.ckpt";
  save_weights(EFEWeights::zeros(EFEConfig{}), p);
  return p;
}

struct WarningCounter {
  int count = 0;
  log::Sink previous;
  WarningCounter() {
    previous = log::set_sink([this](log::Level l, std::string_view) { count += l == log::Level::Warning; });
  }
  ~WarningCounter() { log::set_sink(previous); }
};

}  // namespace

TEST(CliTrain, WritesCheckpointAndHistory) {
  const auto dir = dark_fixture("cli_train", 4, 16);
  const auto r = cmd_train(quick_train(dir, "a.ckpt"));
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  EXPECT_TRUE(fs::exists(dir / "a.ckpt"));
  EXPECT_EQ(r.summary["epochs_completed"], 2);
  EXPECT_EQ(r.summary["images"], 4);
  EXPECT_EQ(r.summary["config"]["lr"], 1e-3);
  std::ifstream hist(dir / "a.ckpt.history.jsonl");
  int lines = 0;
  for (std::string line; std::getline(hist, line);) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST(CliTrain, SeededRunsGiveIdenticalCheckpoints) {
  const auto dir = dark_fixture("cli_train_det", 4, 16);
  ASSERT_EQ(cmd_train(quick_train(dir, "a.ckpt")).exit_code, 0);
  ASSERT_EQ(cmd_train(quick_train(dir, "b.ckpt")).exit_code, 0);
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
}

TEST(CliTrain, BrightnessAblationIsDarker) {
  const auto dir = dark_fixture("cli_train_abl", 6, 24);
  auto full = quick_train(dir, "full.ckpt");
  full.size = 24;
  full.train.epochs = 8;
  auto no_bri = full;
  no_bri.out = dir / "nobri.ckpt";
  no_bri.train.losses.lambda_bri = 0.0;
  const auto a = cmd_train(full), b = cmd_train(no_bri);
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_LT(b.summary["last_epoch"]["mean_brightness"].get<double>(),
            a.summary["last_epoch"]["mean_brightness"].get<double>());
}

TEST(CliTrain, ErrorsGiveNonzeroExit) {
  const auto dir = sgz::testing::scratch_dir("cli_train_err");
  TrainOptions opt;
  opt.data = dir / "nope";
  opt.out = dir / "x.ckpt";
  opt.train.sem_enabled = false;
  const auto r = cmd_train(opt);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_TRUE(r.summary.contains("error"));
}

TEST(CliEnhance, ZeroCheckpointIsIdentity) {
  const auto dir = sgz::testing::scratch_dir("cli_enhance");
  const auto inputs = sgz::testing::write_pngs(sgz::testing::synthetic_scenes(2, 20, 30, 4), dir / "in", "img_%03d.png");
  EnhanceOptions opt;
  opt.checkpoint = zero_checkpoint(dir);
  opt.inputs = {dir / "in"};
  opt.out_dir = dir / "out";
  opt.save_factor = true;
  const auto r = cmd_enhance(opt);
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  ASSERT_EQ(r.summary["outputs"].size(), 2u);
  for (const auto& in : inputs) {
    EXPECT_EQ(load_image(dir / "out" / in.filename()), load_image(in));
    const ImageTensor f = load_image(dir / "out" / (in.stem().string() + "_factor.png"));
    for (double v : f.tensor().values()) EXPECT_NEAR(v, 0.5, 0.5 / 255.0 + 1e-12);
  }
}

TEST(CliEnhance, OutputInRangeAndErrors) {
  const auto dir = sgz::testing::scratch_dir("cli_enhance_err");
  const auto inputs = sgz::testing::write_pngs(sgz::testing::synthetic_scenes(1, 24, 24, 5), dir / "in", "img_%03d.png");
  save_weights(init_efe(EFEConfig{}, 1, 0.5), dir / "w.ckpt");
  EnhanceOptions opt;
  opt.checkpoint = dir / "w.ckpt";
  opt.inputs = inputs;
  opt.out_dir = dir / "out";
  opt.downsample = 2;
  ASSERT_EQ(cmd_enhance(opt).exit_code, 0);
  EXPECT_NO_THROW(load_image(dir / "out" / "img_000.png"));

  opt.checkpoint = dir / "missing.ckpt";
  EXPECT_EQ(cmd_enhance(opt).exit_code, 1);
}

TEST(CliVideo, WorkerCountDoesNotChangeOutput) {
  const auto dir = sgz::testing::scratch_dir("cli_video");
  sgz::testing::write_pngs(sgz::testing::synthetic_scenes(10, 24, 32, 6), dir / "frames", "frame_%06d.png");
  save_weights(init_efe(EFEConfig{}, 2, 0.3), dir / "w.ckpt");
  VideoOptions opt;
  opt.checkpoint = dir / "w.ckpt";
  opt.in_dir = dir / "frames";
  opt.out_dir = dir / "one";
  const auto a = cmd_video(opt);
  opt.workers = 4;
  opt.out_dir = dir / "four";
  const auto b = cmd_video(opt);
  ASSERT_EQ(a.exit_code, 0) << a.summary.dump();
  ASSERT_EQ(b.exit_code, 0) << b.summary.dump();
  EXPECT_EQ(a.summary["frames"], 10);
  EXPECT_TRUE(b.summary.contains("frames_per_second"));
  EXPECT_TRUE(b.summary.contains("mean_latency_seconds"));
  for (int i = 0; i < 10; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.png", i);
    ASSERT_TRUE(fs::exists(dir / "one" / name));
    EXPECT_EQ(read_bytes(dir / "one" / name), read_bytes(dir / "four" / name)) << name;
  }
}

TEST(CliVideo, GapsWarnAndBadFramesFail) {
  const auto dir = sgz::testing::scratch_dir("cli_video_bad");
  sgz::testing::write_pngs(sgz::testing::synthetic_scenes(4, 12, 12, 7), dir / "frames", "frame_%06d.png");
  fs::remove(dir / "frames" / "frame_000002.png");
  VideoOptions opt;
  opt.checkpoint = zero_checkpoint(dir);
  opt.in_dir = dir / "frames";
  opt.out_dir = dir / "out";
  {
    WarningCounter warnings;
    const auto r = cmd_video(opt);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_EQ(r.summary["frames"], 3);
    EXPECT_EQ(r.summary["gaps"], nlohmann::json::array({2}));
    EXPECT_GE(warnings.count, 1);
  }
  std::ofstream(dir / "frames" / "frame_000004.png") << "not a png";
  const auto r = cmd_video(opt);
  EXPECT_EQ(r.exit_code, 1);
  ASSERT_EQ(r.summary["unreadable"].size(), 1u);
  EXPECT_EQ(r.summary["unreadable"][0]["frame"], "frame_000004.png");
}

TEST(CliVideo, FrameIndexParsing) {
  EXPECT_EQ(frame_index("a/frame_000123.png"), 123);
  EXPECT_FALSE(frame_index("frame_123.png").has_value());
  EXPECT_FALSE(frame_index("frame_000123.jpg").has_value());
}

TEST(CliSynth, PairsAndBrightness) {
  const auto dir = sgz::testing::scratch_dir("cli_synth");
  sgz::testing::write_pngs(sgz::testing::synthetic_scenes(3, 16, 16, 8), dir / "src", "img_%03d.png");
  SynthOptions opt;
  opt.source = dir / "src";
  opt.out_dir = dir / "out";
  const auto r = cmd_synth(opt);
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  EXPECT_EQ(r.summary["pairs"], 3);
  EXPECT_LT(r.summary["mean_brightness_dark"].get<double>(), r.summary["mean_brightness_source"].get<double>());
  EXPECT_TRUE(fs::exists(dir / "out" / "img_001_dark.png"));

  opt.gamma = 1.0;
  opt.out_dir = dir / "same";
  ASSERT_EQ(cmd_synth(opt).exit_code, 0);
  for (int i = 0; i < 3; ++i) {
    const std::string stem = "img_00" + std::to_string(i);
    const ImageTensor dark = load_image(dir / "same" / (stem + "_dark.png"));
    const ImageTensor src = load_image(dir / "src" / (stem + ".png"));
    EXPECT_EQ(dark, src) << stem;
  }
}

TEST(CliBench, CountsAndLinearity) {
  BenchOptions opt;
  opt.width = 64;
  opt.height = 48;
  opt.runs = 3;
  opt.warmup = 1;
  const auto r = cmd_bench(opt);
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  EXPECT_EQ(r.summary["params"], 10561);
  EXPECT_EQ(r.summary["macs_per_pixel"], 10075);
  EXPECT_EQ(r.summary["macs"], 10075 * 64 * 48);
  EXPECT_TRUE(r.summary["mac_linear"].get<bool>());
  EXPECT_GT(r.summary["seconds_median"].get<double>(), 0.0);
  opt.runs = 0;
  EXPECT_EQ(cmd_bench(opt).exit_code, 1);
}

TEST(CliBench, RuntimeScalesWithPixelCount) {
  BenchOptions opt;
  opt.width = 240;
  opt.height = 180;
  opt.runs = 5;
  opt.warmup = 1;
  opt.scaling = true;
  const auto r = cmd_bench(opt);
  ASSERT_EQ(r.exit_code, 0);
  const double ratio = r.summary["scaling_ratio_2x"].get<double>();
  EXPECT_GE(ratio, 3.0);
  EXPECT_LE(ratio, 5.0);
}

TEST(CliEval, IdenticalSetsAndAggregation) {
  const auto dir = sgz::testing::scratch_dir("cli_eval");
  const auto scenes = sgz::testing::synthetic_scenes(3, 24, 24, 9);
  sgz::testing::write_pngs(scenes, dir / "ref", "img_%03d.png");
  sgz::testing::write_pngs(scenes, dir / "same", "img_%03d.png");
  EvalOptions opt;
  opt.enhanced = dir / "same";
  opt.reference = dir / "ref";
  auto r = cmd_eval(opt);
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  EXPECT_EQ(r.summary["mean"]["psnr"], 100.0);
  EXPECT_NEAR(r.summary["mean"]["ssim"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(r.summary["mean"]["mse"], 0.0);

  std::vector<ImageTensor> dark;
  for (const auto& s : scenes) dark.push_back(gamma_darken(s, 2.0));
  sgz::testing::write_pngs(dark, dir / "dark", "img_%03d_dark.png");
  std::ofstream(dir / "external.jsonl") << R"({"name": "img_001_dark.png", "brisque": 31.5})" << '\n';
  opt.enhanced = dir / "dark";
  opt.strip_suffix = "_dark";
  opt.report = dir / "report.jsonl";
  opt.merge_external = dir / "external.jsonl";
  r = cmd_eval(opt);
  ASSERT_EQ(r.exit_code, 0) << r.summary.dump();
  ASSERT_EQ(r.summary["rows"].size(), 3u);
  double mse_sum = 0.0;
  for (const auto& row : r.summary["rows"]) mse_sum += row["mse"].get<double>();
  EXPECT_NEAR(mse_sum / 3.0, r.summary["mean"]["mse"].get<double>(), 1e-9);
  EXPECT_EQ(r.summary["rows"][1]["external"]["brisque"], 31.5);
  EXPECT_FALSE(r.summary["rows"][0].contains("external"));

  std::ifstream rep(opt.report);
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(rep, line);) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines.back()["name"], "mean");

  opt.enhanced = dir / "nothing";
  EXPECT_EQ(cmd_eval(opt).exit_code, 1);
}
