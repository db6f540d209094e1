#include "sgz/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "sgz/errors.hpp"
#include "sgz/log.hpp"

namespace sgz {
namespace {

void add_scaled(EFEWeights& dst, const EFEWeights& src, double scale) {
  auto d = dst.params();
  const auto s = src.params();
  for (std::size_t p = 0; p < d.size(); ++p) {
    for (std::size_t i = 0; i < d[p].values.size(); ++i) d[p].values[i] += scale * s[p].values[i];
  }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x, double scale) {
  acc.spa += scale * x.spa;
  acc.rgb += scale * x.rgb;
  acc.bri += scale * x.bri;
  acc.tv += scale * x.tv;
  acc.sem += scale * x.sem;
  acc.total += scale * x.total;
}

std::vector<SampleGradient> evaluate_batch(const EFEWeights& w, const std::vector<const Tensor*>& batch,
                                           const TrainConfig& cfg, const USSNetwork* uss) {
  std::vector<SampleGradient> results(batch.size());
  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) results[i] = sample_gradient(w, *batch[i], cfg, uss);
    return results;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (int t = 0; t < workers; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < batch.size(); i += workers) {
          results[i] = sample_gradient(w, *batch[i], cfg, uss);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ArgumentError("learning rate must be positive");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch < 1) throw ArgumentError("batch size must be >= 1");
  if (!(clip_norm > 0.0)) throw ArgumentError("clip norm must be positive");
  if (workers < 1) throw ArgumentError("workers must be >= 1");
  if (checkpoint_every < 0) throw ArgumentError("checkpoint interval must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw ArgumentError("checkpoint interval given without a checkpoint directory");
  }
  rie.validate();
  losses.validate();
  efe.validate();
}

double global_norm(const std::vector<ParamRef>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values) sq += v * v;
  }
  return std::sqrt(sq);
}

ClipStats clip_grad_norm(std::vector<ParamRef>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ArgumentError("max_norm must be positive");
  for (const auto& g : grads) {
    for (double v : g.values) {
      if (!std::isfinite(v)) throw TrainingAbort("non-finite gradient in " + g.name);
    }
  }
  ClipStats stats;
  stats.norm_before = global_norm(grads);
  stats.norm_after = stats.norm_before;
  if (stats.norm_before > max_norm) {
    const double scale = max_norm / stats.norm_before;
    for (auto& g : grads) {
      for (double& v : g.values) v *= scale;
    }
    stats.norm_after = global_norm(grads);
  }
  return stats;
}

void AdamOptimizer::step(std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
  if (params.size() != grads.size()) throw InternalError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.values.size(), 0.0);
      v_.emplace_back(p.values.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < params[p].values.size(); ++i) {
      const double g = grads[p].values[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      params[p].values[i] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

SampleGradient sample_gradient(const EFEWeights& w, const Tensor& image, const TrainConfig& cfg,
                               const USSNetwork* uss) {
  EfeTrace efe_trace;
  const Tensor factor = efe_forward(w, image, &efe_trace);
  RieTrace rie_trace;
  const Tensor enhanced = enhance(image, factor, cfg.rie, &rie_trace);

  Tensor probs;
  UssTrace uss_trace;
  const bool sem = cfg.sem_enabled && uss != nullptr;
  if (sem) probs = uss->forward_padded(enhanced, &uss_trace);

  LossGradients lg;
  SampleGradient out;
  out.loss = total_loss({enhanced, image, sem ? &probs : nullptr, &factor}, cfg.losses, &lg);
  out.brightness = mean(enhanced);

  Tensor g_enhanced = std::move(lg.enhanced);
  if (sem && cfg.losses.lambda_sem != 0.0) g_enhanced += uss->backward_input(uss_trace, lg.probs);
  RieGradients rg = enhance_backward(factor, rie_trace, g_enhanced, cfg.rie);
  if (!lg.factor.empty()) rg.factor += lg.factor;
  out.grads = efe_backward(w, efe_trace, rg.factor);
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::vector<ImageTensor>& data, const USSNetwork* uss,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw EmptyDatasetError("training set is empty");
  if (cfg.sem_enabled && uss == nullptr) {
    throw ArgumentError("semantic loss enabled but no segmentation network given");
  }
  const bool sem = cfg.sem_enabled;
  const std::uint64_t checksum_before = sem ? uss->checksum() : 0;

  std::ofstream history_out;
  if (!cfg.history_path.empty()) {
    history_out.open(cfg.history_path, std::ios::trunc);
    if (!history_out) throw IoError("cannot open history log " + cfg.history_path.string());
  }
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainResult result;
  result.weights = init_efe(cfg.efe, cfg.seed);
  AdamOptimizer adam(cfg.lr, cfg.adam);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  long batch_index = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng() % (i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch;
    int batches = 0;
    double brightness = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch, ++batch_index) {
      std::vector<const Tensor*> batch;
      for (std::size_t k = first; k < std::min(order.size(), first + cfg.batch); ++k) {
        batch.push_back(&data[order[k]].tensor());
      }
      const auto samples = evaluate_batch(result.weights, batch, cfg, uss);
      const double inv = 1.0 / static_cast<double>(samples.size());
      LossBreakdown batch_loss;
      EFEWeights grads = EFEWeights::zeros(cfg.efe);
      for (const auto& s : samples) {
        accumulate(batch_loss, s.loss, inv);
        add_scaled(grads, s.grads, inv);
        brightness += s.brightness * inv;
      }
      if (!std::isfinite(batch_loss.total)) {
        throw TrainingAbort("non-finite loss at batch " + std::to_string(batch_index) + " (epoch " +
                            std::to_string(epoch) + ")");
      }
      auto grad_refs = grads.params();
      const ClipStats clip = clip_grad_norm(grad_refs, cfg.clip_norm);
      auto param_refs = result.weights.params();
      adam.step(param_refs, grad_refs);

      accumulate(rec.loss, batch_loss, 1.0);
      rec.grad_norm_mean += clip.norm_before;
      rec.grad_norm_max = std::max(rec.grad_norm_max, clip.norm_before);
      rec.clipped_norm_max = std::max(rec.clipped_norm_max, clip.norm_after);
      ++batches;
    }
    accumulate(rec.loss, rec.loss, 1.0 / batches - 1.0);
    rec.grad_norm_mean /= batches;
    rec.mean_brightness = brightness / batches;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);

    if (history_out.is_open()) history_out << to_json(rec).dump() << '\n' << std::flush;
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "efe_epoch%04d.ckpt", epoch);
      save_weights(result.weights, cfg.checkpoint_dir / name, {{"epoch", epoch}, {"seed", cfg.seed}});
    }
    if (on_epoch) on_epoch(rec, result.weights);
    log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.loss.total));
  }

  if (sem) {
    result.uss_checksum = uss->checksum();
    if (result.uss_checksum != checksum_before) {
      throw InternalError("segmentation guide parameters changed during training");
    }
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const DatasetSpec& spec, const USSNetwork* uss,
                  const EpochCallback& on_epoch) {
  std::vector<std::string> warnings;
  const auto data = load_dataset(spec, &warnings);
  for (const auto& w : warnings) log::warn(w);
  return train(cfg, data, uss, on_epoch);
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {{"spa", b.spa}, {"rgb", b.rgb}, {"bri", b.bri}, {"tv", b.tv}, {"sem", b.sem}, {"total", b.total}};
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"loss", to_json(r.loss)},
          {"mean_brightness", r.mean_brightness},
          {"wall_seconds", r.wall_seconds},
          {"grad_norm_mean", r.grad_norm_mean},
          {"grad_norm_max", r.grad_norm_max},
          {"clipped_norm_max", r.clipped_norm_max}};
}

nlohmann::json to_json(const TrainConfig& cfg) {
  const auto& l = cfg.losses;
  return {
      {"lr", cfg.lr},
      {"epochs", cfg.epochs},
      {"batch", cfg.batch},
      {"clip_norm", cfg.clip_norm},
      {"seed", cfg.seed},
      {"sem_enabled", cfg.sem_enabled},
      {"workers", cfg.workers},
      {"adam", {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"epsilon", cfg.adam.epsilon}}},
      {"efe", {{"width", cfg.efe.width}, {"blocks", cfg.efe.blocks}}},
      {"rie", {{"order", cfg.rie.order}, {"steps", cfg.rie.steps}}},
      {"losses",
       {{"A", l.A},
        {"alpha", l.alpha},
        {"epsilon", l.epsilon},
        {"E", l.E},
        {"bri_patch", l.bri_patch},
        {"beta", l.beta},
        {"gamma", l.gamma},
        {"lambda_spa", l.lambda_spa},
        {"lambda_rgb", l.lambda_rgb},
        {"lambda_bri", l.lambda_bri},
        {"lambda_tv", l.lambda_tv},
        {"lambda_sem", l.lambda_sem},
        {"tv_target", l.tv_target == TvTarget::Factor ? "factor" : "enhanced"}}},
  };
}

}  // namespace sgz
