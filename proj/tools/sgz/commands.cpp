#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include "sgz/efe.hpp"
#include "sgz/image.hpp"
#include "sgz/log.hpp"
#include "sgz/metrics.hpp"
#include "sgz/rie.hpp"
#include "sgz/uss.hpp"

namespace sgz::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

json rie_json(const RIEConfig& r) { return {{"order", r.order}, {"steps", r.steps}}; }

ImageTensor run_pipeline(const EFEWeights& w, const ImageTensor& img, const RIEConfig& rie, int downsample,
                         EnhancementFactor* factor_out = nullptr) {
  EnhancementFactor factor = efe_forward_reduced(w, img, downsample);
  ImageTensor out = enhance(img, factor, rie);
  if (factor_out) *factor_out = std::move(factor);
  return out;
}

ImageTensor factor_visual(const EnhancementFactor& f) {
  Tensor t = f.tensor();
  for (double& v : t.values()) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
  return ImageTensor::from_tensor(std::move(t));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      const auto listed = list_image_files(p);
      files.insert(files.end(), listed.begin(), listed.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

// External scores: a JSON object keyed by file name or stem, or one JSON
// object per line carrying a "name" field.
std::map<std::string, json> read_external(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read external scores " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<std::string, json> out;
  json doc = json::parse(text, nullptr, false);
  // A single JSONL row also parses as one object; it is recognised by its "name" key.
  if (!doc.is_discarded() && doc.is_object() && !doc.contains("name")) {
    for (auto& [k, v] : doc.items()) out[k] = v;
    return out;
  }
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object() || !row.contains("name")) {
      throw FormatError("external scores line " + std::to_string(line_no) + " is not an object with a name");
    }
    const std::string name = row["name"].get<std::string>();
    row.erase("name");
    out[name] = row;
  }
  return out;
}

}  // namespace

std::optional<int> frame_index(const fs::path& p) {
  static const std::regex pattern(R"(frame_(\d{6})\.png)");
  std::smatch m;
  const std::string name = p.filename().string();
  if (!std::regex_match(name, m, pattern)) return std::nullopt;
  return std::stoi(m[1].str());
}

CommandResult cmd_train(const TrainOptions& opt) {
  return guarded([&] {
    const auto t0 = Clock::now();
    DatasetSpec spec;
    spec.root = opt.data;
    spec.target_height = opt.size;
    spec.target_width = opt.size;
    spec.shuffle_seed = opt.train.seed;
    spec.stem_suffix = opt.stem_suffix;
    spec.validate();

    TrainConfig cfg = opt.train;
    cfg.history_path = opt.history.empty() ? fs::path(opt.out.string() + ".history.jsonl") : opt.history;
    if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty()) {
      cfg.checkpoint_dir = opt.checkpoint_dir.empty() ? opt.out.parent_path() / "checkpoints" : opt.checkpoint_dir;
    }
    cfg.validate();
    if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());

    std::optional<USSNetwork> uss;
    std::string backbone_source = "none";
    if (cfg.sem_enabled) {
      USSWeights uw;
      uw.classes = opt.classes;
      if (opt.backbone.empty()) {
        log::warn("no --backbone given; using the seeded random backbone (no semantic fidelity)");
        uw.backbone = random_backbone(cfg.seed);
        backbone_source = "random";
      } else {
        uw.backbone = load_backbone(opt.backbone);
        backbone_source = opt.backbone.string();
      }
      uw.topdown = init_topdown(cfg.seed, opt.classes);
      uss.emplace(std::move(uw));
    }

    std::vector<std::string> warnings;
    const auto data = load_dataset(spec, &warnings);
    for (const auto& w : warnings) log::warn(w);

    const TrainResult result = train(cfg, data, uss ? &*uss : nullptr);
    json meta = {{"seed", cfg.seed}, {"epochs", cfg.epochs}, {"images", data.size()}};
    save_weights(result.weights, opt.out, meta);

    const auto& last = result.history.epochs.back();
    json summary = {
        {"command", "train"},
        {"checkpoint", opt.out.string()},
        {"history", cfg.history_path.string()},
        {"images", data.size()},
        {"skipped", warnings.size()},
        {"epochs_completed", result.history.epochs.size()},
        {"first_epoch", to_json(result.history.epochs.front())},
        {"last_epoch", to_json(last)},
        {"backbone", backbone_source},
        {"uss_checksum", result.uss_checksum},
        {"wall_seconds", seconds_since(t0)},
        {"config", to_json(cfg)},
    };
    summary["config"]["size"] = opt.size;
    summary["config"]["classes"] = opt.classes;
    return CommandResult{0, summary};
  });
}

CommandResult cmd_enhance(const EnhanceOptions& opt) {
  return guarded([&] {
    if (opt.downsample < 1) throw ArgumentError("--downsample must be >= 1");
    opt.rie.validate();
    const EFEWeights w = load_weights(opt.checkpoint);
    const auto files = expand_inputs(opt.inputs);
    if (files.empty()) throw ArgumentError("no input images");
    fs::create_directories(opt.out_dir);

    json outputs = json::array();
    for (const auto& f : files) {
      const auto t0 = Clock::now();
      const ImageTensor img = load_image(f);
      EnhancementFactor factor = EnhancementFactor::filled(1, 1, 0.0);
      const ImageTensor out = run_pipeline(w, img, opt.rie, opt.downsample, &factor);
      const fs::path dst = opt.out_dir / (f.stem().string() + ".png");
      save_image(out, dst);
      json row = {{"input", f.string()},
                  {"output", dst.string()},
                  {"mean_brightness_in", mean_brightness(img)},
                  {"mean_brightness_out", mean_brightness(out)},
                  {"seconds", seconds_since(t0)}};
      if (opt.save_factor) {
        const fs::path fdst = opt.out_dir / (f.stem().string() + "_factor.png");
        save_image(factor_visual(factor), fdst);
        row["factor"] = fdst.string();
      }
      outputs.push_back(row);
    }
    return CommandResult{0,
                         {{"command", "enhance"},
                          {"checkpoint", opt.checkpoint.string()},
                          {"outputs", outputs},
                          {"config", {{"downsample", opt.downsample}, {"rie", rie_json(opt.rie)}}}}};
  });
}

CommandResult cmd_video(const VideoOptions& opt) {
  return guarded([&] {
    if (opt.workers < 1) throw ArgumentError("--workers must be >= 1");
    if (opt.downsample < 1) throw ArgumentError("--downsample must be >= 1");
    opt.rie.validate();
    const EFEWeights w = load_weights(opt.checkpoint);
    if (!fs::is_directory(opt.in_dir)) throw IoError("frame directory not found: " + opt.in_dir.string());

    std::vector<std::pair<int, fs::path>> frames;
    for (const auto& entry : fs::directory_iterator(opt.in_dir)) {
      if (auto idx = frame_index(entry.path())) frames.emplace_back(*idx, entry.path());
    }
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw EmptyDatasetError("no frame_%06d.png files in " + opt.in_dir.string());

    std::vector<int> gaps;
    for (std::size_t i = 1; i < frames.size(); ++i) {
      for (int k = frames[i - 1].first + 1; k < frames[i].first; ++k) gaps.push_back(k);
    }
    if (!gaps.empty()) {
      log::warn("frame numbering has " + std::to_string(gaps.size()) + " gap(s), first missing index " +
                std::to_string(gaps.front()));
    }
    fs::create_directories(opt.out_dir);

    std::vector<double> latency(frames.size(), 0.0);
    std::vector<std::string> failed(frames.size());
    std::atomic<std::size_t> next{0};
    const auto t0 = Clock::now();
    auto worker = [&] {
      for (std::size_t i = next++; i < frames.size(); i = next++) {
        const auto f0 = Clock::now();
        try {
          const ImageTensor img = load_image(frames[i].second);
          save_image(run_pipeline(w, img, opt.rie, opt.downsample), opt.out_dir / frames[i].second.filename());
        } catch (const std::exception& e) {
          failed[i] = e.what();
        }
        latency[i] = seconds_since(f0);
      }
    };
    const int nthreads = std::min<int>(opt.workers, static_cast<int>(frames.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    const double total = seconds_since(t0);

    json bad = json::array();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (!failed[i].empty()) bad.push_back({{"frame", frames[i].second.filename().string()}, {"error", failed[i]}});
    }
    double mean_latency = 0.0;
    for (double l : latency) mean_latency += l;
    mean_latency /= static_cast<double>(frames.size());

    json summary = {{"command", "video"},
                    {"input_dir", opt.in_dir.string()},
                    {"output_dir", opt.out_dir.string()},
                    {"frames", frames.size()},
                    {"written", frames.size() - bad.size()},
                    {"gaps", gaps},
                    {"wall_seconds", total},
                    {"frames_per_second", frames.size() / total},
                    {"mean_latency_seconds", mean_latency},
                    {"config", {{"workers", opt.workers}, {"downsample", opt.downsample}, {"rie", rie_json(opt.rie)}}}};
    if (!bad.empty()) {
      summary["unreadable"] = bad;
      summary["error"] = std::to_string(bad.size()) + " frame(s) failed";
      return CommandResult{1, summary};
    }
    return CommandResult{0, summary};
  });
}

CommandResult cmd_synth(const SynthOptions& opt) {
  return guarded([&] {
    if (!(opt.gamma > 0.0)) throw ArgumentError("--gamma must be positive");
    if (opt.size != 0 && opt.size < 1) throw ArgumentError("--size must be positive");
    const auto files = list_image_files(opt.source);
    if (files.empty()) throw EmptyDatasetError("no images in " + opt.source.string());
    fs::create_directories(opt.out_dir);

    double src_mean = 0.0, dark_mean = 0.0;
    std::size_t pairs = 0;
    json skipped = json::array();
    for (const auto& f : files) {
      ImageTensor img = ImageTensor::filled(1, 1, 0.0);
      try {
        img = load_image(f);
      } catch (const Error& e) {
        log::warn(std::string("skipping ") + e.what());
        skipped.push_back(f.string());
        continue;
      }
      if (opt.size > 0) img = resize_bilinear(img, opt.size, opt.size);
      const ImageTensor dark = gamma_darken(img, opt.gamma);
      const std::string stem = f.stem().string();
      save_image(img, opt.out_dir / (stem + ".png"));
      save_image(dark, opt.out_dir / (stem + "_dark.png"));
      src_mean += mean_brightness(img);
      dark_mean += mean_brightness(dark);
      ++pairs;
    }
    if (pairs == 0) throw EmptyDatasetError("no readable images in " + opt.source.string());
    return CommandResult{0,
                         {{"command", "synth"},
                          {"output_dir", opt.out_dir.string()},
                          {"pairs", pairs},
                          {"skipped", skipped},
                          {"mean_brightness_source", src_mean / pairs},
                          {"mean_brightness_dark", dark_mean / pairs},
                          {"config", {{"gamma", opt.gamma}, {"size", opt.size}}}}};
  });
}

CommandResult cmd_bench(const BenchOptions& opt) {
  return guarded([&] {
    if (opt.width < 1 || opt.height < 1) throw ArgumentError("--size must be positive");
    if (opt.runs < 1 || opt.warmup < 0) throw ArgumentError("--runs must be >= 1 and --warmup >= 0");
    if (opt.downsample < 1) throw ArgumentError("--downsample must be >= 1");
    opt.rie.validate();
    const EFEWeights w = opt.checkpoint.empty() ? init_efe(EFEConfig{}, opt.seed) : load_weights(opt.checkpoint);

    auto time_at = [&](int height, int width) {
      std::mt19937_64 rng(opt.seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Tensor t(3, height, width);
      for (double& v : t.values()) v = u(rng);
      const ImageTensor img = ImageTensor::from_tensor(std::move(t));
      for (int i = 0; i < opt.warmup; ++i) run_pipeline(w, img, opt.rie, opt.downsample);
      std::vector<double> times;
      for (int i = 0; i < opt.runs; ++i) {
        const auto t0 = Clock::now();
        run_pipeline(w, img, opt.rie, opt.downsample);
        times.push_back(seconds_since(t0));
      }
      return times;
    };

    const std::size_t params = count_params(w);
    const std::uint64_t macs = count_macs(w, opt.height, opt.width);
    const std::uint64_t macs_1px = count_macs(w, 1, 1);
    const std::uint64_t macs_2x = count_macs(w, 2 * opt.height, 2 * opt.width);
    const int rh = std::max(1, opt.height / opt.downsample), rw = std::max(1, opt.width / opt.downsample);

    const auto times = time_at(opt.height, opt.width);
    json summary = {
        {"command", "bench"},
        {"params", params},
        {"params_millions", params / 1e6},
        {"macs", macs},
        {"macs_per_pixel", macs_1px},
        {"macs_effective", count_macs(w, rh, rw)},
        {"macs_2x", macs_2x},
        {"mac_linear", macs == macs_1px * static_cast<std::uint64_t>(opt.height) * opt.width &&
                           macs_2x == 4 * macs},
        {"seconds_median", median(times)},
        {"seconds_min", *std::min_element(times.begin(), times.end())},
        {"runs", opt.runs},
        {"config",
         {{"width", opt.width},
          {"height", opt.height},
          {"warmup", opt.warmup},
          {"downsample", opt.downsample},
          {"seed", opt.seed},
          {"checkpoint", opt.checkpoint.string()},
          {"rie", rie_json(opt.rie)}}},
    };
    if (opt.scaling) {
      const double base = median(times);
      const double big = median(time_at(2 * opt.height, 2 * opt.width));
      summary["seconds_median_2x"] = big;
      summary["scaling_ratio_2x"] = big / base;
    }
    return CommandResult{0, summary};
  });
}

CommandResult cmd_eval(const EvalOptions& opt) {
  return guarded([&] {
    const auto enhanced = list_image_files(opt.enhanced);
    const auto refs = list_image_files(opt.reference);
    std::map<std::string, fs::path> ref_by_stem;
    for (const auto& r : refs) ref_by_stem[r.stem().string()] = r;

    std::map<std::string, json> external;
    if (!opt.merge_external.empty()) external = read_external(opt.merge_external);

    json rows = json::array();
    json unmatched = json::array();
    MetricReport acc;
    for (const auto& e : enhanced) {
      std::string key = e.stem().string();
      if (!opt.strip_suffix.empty() && key.size() > opt.strip_suffix.size() &&
          key.compare(key.size() - opt.strip_suffix.size(), opt.strip_suffix.size(), opt.strip_suffix) == 0) {
        key.resize(key.size() - opt.strip_suffix.size());
      }
      const auto it = ref_by_stem.find(key);
      if (it == ref_by_stem.end()) {
        unmatched.push_back(e.filename().string());
        continue;
      }
      const MetricReport r = evaluate(load_image(e), load_image(it->second));
      json row = to_json(r);
      row["name"] = e.filename().string();
      row["reference"] = it->second.filename().string();
      for (const std::string& k : {e.filename().string(), e.stem().string()}) {
        if (auto x = external.find(k); x != external.end()) {
          row["external"] = x->second;
          break;
        }
      }
      acc.psnr += r.psnr;
      acc.ssim += r.ssim;
      acc.mse += r.mse;
      acc.mean_brightness += r.mean_brightness;
      rows.push_back(row);
    }
    if (rows.empty()) throw EmptyDatasetError("no (enhanced, reference) pairs matched");
    const double n = static_cast<double>(rows.size());
    acc.psnr /= n;
    acc.ssim /= n;
    acc.mse /= n;
    acc.mean_brightness /= n;

    if (!opt.report.empty()) {
      std::ofstream out(opt.report, std::ios::trunc);
      if (!out) throw IoError("cannot write report " + opt.report.string());
      for (const auto& row : rows) out << row.dump() << '\n';
      json mean_row = to_json(acc);
      mean_row["name"] = "mean";
      out << mean_row.dump() << '\n';
    }
    if (!unmatched.empty()) log::warn(std::to_string(unmatched.size()) + " enhanced file(s) without a reference");
    return CommandResult{0,
                         {{"command", "eval"},
                          {"pairs", rows.size()},
                          {"mean", to_json(acc)},
                          {"rows", rows},
                          {"unmatched", unmatched},
                          {"report", opt.report.string()},
                          {"config",
                           {{"enhanced", opt.enhanced.string()},
                            {"reference", opt.reference.string()},
                            {"strip_suffix", opt.strip_suffix},
                            {"merge_external", opt.merge_external.string()}}}}};
  });
}

}  // namespace sgz::cli
