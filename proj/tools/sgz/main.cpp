#include <cstdio>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "commands.hpp"
#include "sgz/log.hpp"

namespace {

void add_rie_flags(CLI::App* cmd, sgz::RIEConfig& rie) {
  cmd->add_option("--steps", rie.steps, "Curve iterations T")->capture_default_str();
  cmd->add_option("--order", rie.order, "Curve order")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace sgz::cli;
  CLI::App app{"sgz: semantic-guided zero-shot low-light enhancement"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Print progress messages on stderr");

  TrainOptions train;
  bool no_sem = false;
  std::string tv_target = "enhanced";
  auto* t = app.add_subcommand("train", "Train the enhancement network on a directory of images");
  t->add_option("--data", train.data, "Training image directory")->required();
  t->add_option("--out", train.out, "Checkpoint path")->capture_default_str();
  t->add_option("--history", train.history, "Per-epoch history log (default <out>.history.jsonl)");
  t->add_option("--epochs", train.train.epochs)->capture_default_str();
  t->add_option("--batch", train.train.batch)->capture_default_str();
  t->add_option("--lr", train.train.lr)->capture_default_str();
  t->add_option("--clip", train.train.clip_norm, "Gradient norm limit")->capture_default_str();
  t->add_option("--size", train.size, "Training resolution (square)")->capture_default_str();
  t->add_option("--seed", train.train.seed)->capture_default_str();
  t->add_option("--workers", train.train.workers, "Samples evaluated concurrently")->capture_default_str();
  t->add_flag("--no-sem", no_sem, "Disable the semantic loss");
  t->add_option("--backbone", train.backbone, "ResNet-50 archive (default: seeded random stand-in)");
  t->add_option("--classes", train.classes)->capture_default_str();
  t->add_option("--suffix", train.stem_suffix, "Only use files whose stem ends with this");
  t->add_option("--checkpoint-every", train.train.checkpoint_every, "Epochs between checkpoints")
      ->capture_default_str();
  t->add_option("--checkpoint-dir", train.checkpoint_dir);
  t->add_option("--lambda-spa", train.train.losses.lambda_spa)->capture_default_str();
  t->add_option("--lambda-rgb", train.train.losses.lambda_rgb)->capture_default_str();
  t->add_option("--lambda-bri", train.train.losses.lambda_bri)->capture_default_str();
  t->add_option("--lambda-tv", train.train.losses.lambda_tv)->capture_default_str();
  t->add_option("--lambda-sem", train.train.losses.lambda_sem)->capture_default_str();
  t->add_option("--A", train.train.losses.A, "Spatial-consistency pool size")->capture_default_str();
  t->add_option("--E", train.train.losses.E, "Exposure target")->capture_default_str();
  t->add_option("--bri-patch", train.train.losses.bri_patch)->capture_default_str();
  t->add_option("--tv-target", tv_target, "enhanced|factor")
      ->check(CLI::IsMember({"enhanced", "factor"}))
      ->capture_default_str();
  t->add_option("--width", train.train.efe.width, "Hidden channels")->capture_default_str();
  add_rie_flags(t, train.train.rie);

  EnhanceOptions enh;
  auto* e = app.add_subcommand("enhance", "Enhance images with a trained checkpoint");
  e->add_option("--checkpoint", enh.checkpoint)->required();
  e->add_option("inputs", enh.inputs, "Image files or directories")->required();
  e->add_option("--out", enh.out_dir)->capture_default_str();
  e->add_flag("--save-factor", enh.save_factor, "Also write the factor map as an image");
  e->add_option("--downsample", enh.downsample, "Estimate the factor at 1/d resolution")->capture_default_str();
  add_rie_flags(e, enh.rie);

  VideoOptions vid;
  auto* v = app.add_subcommand("video", "Enhance a directory of frame_%06d.png frames");
  v->add_option("--checkpoint", vid.checkpoint)->required();
  v->add_option("--in", vid.in_dir)->required();
  v->add_option("--out", vid.out_dir)->required();
  v->add_option("--workers", vid.workers)->capture_default_str();
  v->add_option("--downsample", vid.downsample)->capture_default_str();
  add_rie_flags(v, vid.rie);

  SynthOptions syn;
  auto* s = app.add_subcommand("synth", "Write gamma-darkened (dark, ground truth) pairs");
  s->add_option("--source", syn.source)->required();
  s->add_option("--out", syn.out_dir)->required();
  s->add_option("--gamma", syn.gamma)->capture_default_str();
  s->add_option("--size", syn.size, "Resize to a square of this size (0 keeps size)")->capture_default_str();

  BenchOptions bench;
  std::string bench_size = "1200x900";
  auto* b = app.add_subcommand("bench", "Report parameters, MACs and inference time");
  b->add_option("--checkpoint", bench.checkpoint);
  b->add_option("--size", bench_size, "WIDTHxHEIGHT")->capture_default_str();
  b->add_option("--runs", bench.runs)->capture_default_str();
  b->add_option("--warmup", bench.warmup)->capture_default_str();
  b->add_option("--downsample", bench.downsample)->capture_default_str();
  b->add_option("--seed", bench.seed)->capture_default_str();
  b->add_flag("--scaling", bench.scaling, "Also time at twice the linear resolution");
  add_rie_flags(b, bench.rie);

  EvalOptions ev;
  auto* m = app.add_subcommand("eval", "PSNR / SSIM / MSE of enhanced images against references");
  m->add_option("--enhanced", ev.enhanced)->required();
  m->add_option("--reference", ev.reference)->required();
  m->add_option("--report", ev.report, "Write per-image rows plus a mean row");
  m->add_option("--merge-external", ev.merge_external, "Attach externally computed scores");
  m->add_option("--strip-suffix", ev.strip_suffix, "Suffix removed from enhanced names before matching");

  CLI11_PARSE(app, argc, argv);
  if (verbose) {
    sgz::log::set_sink([](sgz::log::Level level, std::string_view msg) {
      std::cerr << (level == sgz::log::Level::Warning ? "warning: " : "") << msg << '\n';
    });
  }

  CommandResult result;
  if (*t) {
    train.train.sem_enabled = !no_sem;
    train.train.losses.tv_target = tv_target == "factor" ? sgz::TvTarget::Factor : sgz::TvTarget::Enhanced;
    result = cmd_train(train);
  } else if (*e) {
    result = cmd_enhance(enh);
  } else if (*v) {
    result = cmd_video(vid);
  } else if (*s) {
    result = cmd_synth(syn);
  } else if (*b) {
    static const std::regex size_re(R"((\d+)[xX](\d+))");
    std::smatch sm;
    if (!std::regex_match(bench_size, sm, size_re)) {
      result = {1, {{"error", "--size must look like 1200x900"}}};
    } else {
      bench.width = std::stoi(sm[1].str());
      bench.height = std::stoi(sm[2].str());
      result = cmd_bench(bench);
    }
  } else if (*m) {
    result = cmd_eval(ev);
  }

  if (result.exit_code != 0 && result.summary.contains("error")) {
    std::cerr << "error: " << result.summary["error"].get<std::string>() << '\n';
  }
  result.summary["exit_code"] = result.exit_code;
  std::cout << result.summary.dump(2) << std::endl;
  return result.exit_code;
}
