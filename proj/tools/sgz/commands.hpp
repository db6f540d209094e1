#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgz/trainer.hpp"

namespace sgz::cli {

struct CommandResult {
  int exit_code = 0;
  nlohmann::json summary = nlohmann::json::object();
};

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out = "efe.ckpt";
  std::filesystem::path history;  // defaults to <out>.history.jsonl
  std::filesystem::path checkpoint_dir;
  int size = 512;
  std::string stem_suffix;
  std::filesystem::path backbone;  // empty: seeded random stand-in
  int classes = 21;
  TrainConfig train;
};

struct EnhanceOptions {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> inputs;  // files or directories
  std::filesystem::path out_dir = "enhanced";
  bool save_factor = false;
  int downsample = 1;
  RIEConfig rie;
};

struct VideoOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path in_dir;
  std::filesystem::path out_dir;
  int workers = 1;
  int downsample = 1;
  RIEConfig rie;
};

struct SynthOptions {
  std::filesystem::path source;
  std::filesystem::path out_dir;
  double gamma = 3.0;
  int size = 0;  // 0 keeps the source resolution
};

struct BenchOptions {
  std::filesystem::path checkpoint;  // empty: freshly initialized weights
  int width = 1200;
  int height = 900;
  int runs = 20;
  int warmup = 2;
  int downsample = 1;
  bool scaling = false;  // also time 2x linear resolution
  std::uint64_t seed = 0;
  RIEConfig rie;
};

struct EvalOptions {
  std::filesystem::path enhanced;
  std::filesystem::path reference;
  std::filesystem::path report;  // line-delimited rows; optional
  std::filesystem::path merge_external;
  std::string strip_suffix;  // removed from enhanced stems before matching
};

CommandResult cmd_train(const TrainOptions& opt);
CommandResult cmd_enhance(const EnhanceOptions& opt);
CommandResult cmd_video(const VideoOptions& opt);
CommandResult cmd_synth(const SynthOptions& opt);
CommandResult cmd_bench(const BenchOptions& opt);
CommandResult cmd_eval(const EvalOptions& opt);

// Frame index of a `frame_%06d.png` name, or nullopt.
std::optional<int> frame_index(const std::filesystem::path& p);

// Runs `fn`, mapping sgz::Error to exit 1 and anything else to exit 2 with
// the message in summary["error"].
template <class Fn>
CommandResult guarded(Fn&& fn);

}  // namespace sgz::cli

#include "sgz/errors.hpp"

template <class Fn>
sgz::cli::CommandResult sgz::cli::guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const sgz::Error& e) {
    return {1, {{"error", e.what()}}};
  } catch (const std::exception& e) {
    return {2, {{"error", e.what()}}};
  }
}
