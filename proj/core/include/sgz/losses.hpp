#pragma once

#include "sgz/tensor.hpp"

namespace sgz {

enum class TvTarget { Enhanced, Factor };

struct LossConfig {
  int A = 4;             // spatial-consistency pooling size
  double alpha = 0.5;    // weight of diagonal neighbours
  double epsilon = 1e-6; // Charbonnier term
  double E = 0.60;       // exposure target
  int bri_patch = 16;    // exposure pooling size
  double beta = 1.0;     // focal scale
  double gamma = 2.0;    // focal exponent
  double lambda_spa = 1.0;
  double lambda_rgb = 1.0;
  double lambda_bri = 1.0;
  double lambda_tv = 1.0;
  double lambda_sem = 0.1;
  TvTarget tv_target = TvTarget::Enhanced;

  void validate() const;
};

struct LossBreakdown {
  double spa = 0.0;
  double rgb = 0.0;
  double bri = 0.0;
  double tv = 0.0;
  double sem = 0.0;
  double total = 0.0;
};

// Every loss returns its value and, when `grad` is non-null, writes the
// gradient with respect to its first tensor argument into it.

// Channel-mean image pooled into non-overlapping A x A regions (trailing
// partial regions dropped). For every region, squared differences of
// |Y_i - Y_j| and |I_i - I_j| over existing 4-adjacent neighbours plus alpha
// times the same over existing diagonal neighbours, averaged over regions.
double spa_loss(const Tensor& enhanced, const Tensor& input, const LossConfig& cfg,
                Tensor* grad = nullptr);

// Sum over channel pairs (R,G), (R,B), (G,B) of sqrt((mean_i - mean_j)^2 + eps^2).
double rgb_loss(const Tensor& enhanced, const LossConfig& cfg, Tensor* grad = nullptr);

// Mean over bri_patch x bri_patch patches of |patch mean - E| on the channel
// mean image.
double bri_loss(const Tensor& enhanced, const LossConfig& cfg, Tensor* grad = nullptr);

// Squared forward differences along x and y over all channels, divided by CHW.
double tv_loss(const Tensor& t, Tensor* grad = nullptr);

// Focal term -beta (1 - p)^gamma ln p averaged over pixels, with p the
// per-pixel maximum class probability of a K x H x W map, floored at 1e-8.
double sem_loss(const Tensor& probs, const LossConfig& cfg, Tensor* grad = nullptr);

inline constexpr double kProbabilityFloor = 1e-8;

struct LossInputs {
  const Tensor& enhanced;
  const Tensor& input;
  const Tensor* probs = nullptr;   // absent: semantic term is 0
  const Tensor* factor = nullptr;  // required when tv_target == Factor
};

struct LossGradients {
  Tensor enhanced;
  Tensor probs;   // empty when no probability map was given
  Tensor factor;  // empty unless tv_target == Factor
};

// Weighted sum of the five terms. Terms with a zero weight are still
// evaluated for logging but contribute no gradient.
LossBreakdown total_loss(const LossInputs& in, const LossConfig& cfg, LossGradients* grads = nullptr);

// Weighted sum of already computed components.
double weighted_total(const LossBreakdown& parts, const LossConfig& cfg);

}  // namespace sgz
