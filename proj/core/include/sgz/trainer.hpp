#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgz/efe.hpp"
#include "sgz/image.hpp"
#include "sgz/losses.hpp"
#include "sgz/rie.hpp"
#include "sgz/uss.hpp"

namespace sgz {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 100;
  int batch = 6;
  double clip_norm = 0.1;
  RIEConfig rie;
  LossConfig losses;
  EFEConfig efe;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool sem_enabled = true;
  // Samples of a batch evaluated concurrently; gradients are reduced in
  // sample order, so results do not depend on this value.
  int workers = 1;
  // Checkpoint every N epochs into checkpoint_dir (0 disables).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  // One JSON record per epoch, rewritten from scratch at the start of a run.
  std::filesystem::path history_path;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;            // means over batches
  double mean_brightness = 0.0;  // mean of the enhanced images
  double wall_seconds = 0.0;
  double grad_norm_mean = 0.0;   // before clipping
  double grad_norm_max = 0.0;    // before clipping
  double clipped_norm_max = 0.0; // after clipping
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  EFEWeights weights;
  TrainHistory history;
  std::uint64_t uss_checksum = 0;  // 0 when the semantic path is off
};

struct ClipStats {
  double norm_before = 0.0;
  double norm_after = 0.0;
};

double global_norm(const std::vector<ParamRef>& grads);

// Scales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm. Throws TrainingAbort naming the first non-finite parameter.
ClipStats clip_grad_norm(std::vector<ParamRef>& grads, double max_norm);

// One Adam step (bias-corrected) over matching parameter/gradient lists.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, AdamConfig cfg) : lr_(lr), cfg_(cfg) {}
  void step(std::vector<ParamRef>& params, const std::vector<ParamRef>& grads);
  long steps() const { return t_; }

 private:
  double lr_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Per-sample forward/backward: factor -> curve -> (segmentation) -> losses.
struct SampleGradient {
  LossBreakdown loss;
  EFEWeights grads;
  double brightness = 0.0;
};
SampleGradient sample_gradient(const EFEWeights& w, const Tensor& image, const TrainConfig& cfg,
                               const USSNetwork* uss);

using EpochCallback = std::function<void(const EpochRecord&, const EFEWeights&)>;

// `uss` is required when cfg.sem_enabled. Throws EmptyDatasetError,
// TrainingAbort (non-finite loss or gradient), or InternalError if the
// segmentation guide's checksum changes.
TrainResult train(const TrainConfig& cfg, const std::vector<ImageTensor>& data, const USSNetwork* uss,
                  const EpochCallback& on_epoch = {});
TrainResult train(const TrainConfig& cfg, const DatasetSpec& data, const USSNetwork* uss,
                  const EpochCallback& on_epoch = {});

nlohmann::json to_json(const LossBreakdown& b);
nlohmann::json to_json(const EpochRecord& r);
nlohmann::json to_json(const TrainConfig& cfg);

}  // namespace sgz
