#include "sgz/losses.hpp"

#include <cmath>
#include <vector>

#include "sgz/errors.hpp"

namespace sgz {
namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

// Channel-mean of non-overlapping `size` x `size` blocks.
struct Pooled {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

Pooled pool_regions(const Tensor& t, int size, const char* what) {
  Pooled p;
  p.rows = t.height() / size;
  p.cols = t.width() / size;
  if (p.rows < 1 || p.cols < 1) {
    throw DegenerateInputError(std::string(what) + ": image " + t.shape_string() +
                               " is smaller than one " + std::to_string(size) + "x" +
                               std::to_string(size) + " region");
  }
  p.values.assign(static_cast<std::size_t>(p.rows) * p.cols, 0.0);
  const double scale = 1.0 / (static_cast<double>(t.channels()) * size * size);
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < p.rows * size; ++y) {
      for (int x = 0; x < p.cols * size; ++x) {
        p.values[static_cast<std::size_t>(y / size) * p.cols + x / size] += t.at(c, y, x);
      }
    }
  }
  for (double& v : p.values) v *= scale;
  return p;
}

// Spreads a gradient on pooled regions back to the pixels that formed them.
void unpool_gradient(const std::vector<double>& g, const Pooled& p, int size, Tensor& grad) {
  const double scale = 1.0 / (static_cast<double>(grad.channels()) * size * size);
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < p.rows * size; ++y) {
      for (int x = 0; x < p.cols * size; ++x) {
        grad.at(c, y, x) += g[static_cast<std::size_t>(y / size) * p.cols + x / size] * scale;
      }
    }
  }
}

struct Neighbour {
  int dy;
  int dx;
  bool diagonal;
};

constexpr Neighbour kNeighbours[] = {
    {-1, 0, false}, {1, 0, false},  {0, -1, false}, {0, 1, false},
    {-1, -1, true}, {-1, 1, true},  {1, -1, true},  {1, 1, true},
};

void prepare_grad(Tensor* grad, const Tensor& like) {
  if (grad) *grad = Tensor::zeros_like(like);
}

}  // namespace

void LossConfig::validate() const {
  if (A < 2) throw ArgumentError("A must be >= 2");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (!(E > 0.0 && E < 1.0)) throw ArgumentError("E must lie in (0, 1)");
  if (bri_patch < 1) throw ArgumentError("bri_patch must be >= 1");
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw ArgumentError("focal coefficients must be >= 0");
  for (double l : {lambda_spa, lambda_rgb, lambda_bri, lambda_tv, lambda_sem}) {
    if (!(l >= 0.0)) throw ArgumentError("loss weights must be >= 0");
  }
}

double spa_loss(const Tensor& enhanced, const Tensor& input, const LossConfig& cfg, Tensor* grad) {
  require_same_shape(enhanced, input, "spa_loss");
  const Pooled y = pool_regions(enhanced, cfg.A, "spa_loss");
  const Pooled i = pool_regions(input, cfg.A, "spa_loss");
  const double regions = static_cast<double>(y.rows) * y.cols;

  std::vector<double> g(grad ? y.values.size() : 0, 0.0);
  double total = 0.0;
  for (int r = 0; r < y.rows; ++r) {
    for (int c = 0; c < y.cols; ++c) {
      for (const auto& n : kNeighbours) {
        const int rr = r + n.dy;
        const int cc = c + n.dx;
        if (rr < 0 || rr >= y.rows || cc < 0 || cc >= y.cols) continue;
        const double weight = n.diagonal ? cfg.alpha : 1.0;
        const double dy = y.at(r, c) - y.at(rr, cc);
        const double di = i.at(r, c) - i.at(rr, cc);
        const double diff = std::abs(dy) - std::abs(di);
        total += weight * diff * diff;
        if (grad) {
          const double t = weight * 2.0 * diff * sign(dy) / regions;
          g[static_cast<std::size_t>(r) * y.cols + c] += t;
          g[static_cast<std::size_t>(rr) * y.cols + cc] -= t;
        }
      }
    }
  }
  if (grad) {
    *grad = Tensor::zeros_like(enhanced);
    unpool_gradient(g, y, cfg.A, *grad);
  }
  return total / regions;
}

double rgb_loss(const Tensor& enhanced, const LossConfig& cfg, Tensor* grad) {
  if (enhanced.channels() != 3) {
    throw ArgumentError("rgb_loss needs 3 channels, got " + enhanced.shape_string());
  }
  const double pixels = static_cast<double>(enhanced.plane_size());
  double m[3] = {0.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c) {
    for (double v : enhanced.channel(c)) m[c] += v;
    m[c] /= pixels;
  }
  constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  double total = 0.0;
  double gm[3] = {0.0, 0.0, 0.0};
  const double eps2 = cfg.epsilon * cfg.epsilon;
  for (const auto& p : kPairs) {
    const double d = m[p[0]] - m[p[1]];
    const double s = std::sqrt(d * d + eps2);
    total += s;
    gm[p[0]] += d / s;
    gm[p[1]] -= d / s;
  }
  if (grad) {
    *grad = Tensor::zeros_like(enhanced);
    for (int c = 0; c < 3; ++c) {
      for (double& v : grad->channel(c)) v = gm[c] / pixels;
    }
  }
  return total;
}

double bri_loss(const Tensor& enhanced, const LossConfig& cfg, Tensor* grad) {
  const Pooled p = pool_regions(enhanced, cfg.bri_patch, "bri_loss");
  const double patches = static_cast<double>(p.values.size());
  double total = 0.0;
  std::vector<double> g(grad ? p.values.size() : 0, 0.0);
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    const double d = p.values[k] - cfg.E;
    total += std::abs(d);
    if (grad) g[k] = sign(d) / patches;
  }
  if (grad) {
    *grad = Tensor::zeros_like(enhanced);
    unpool_gradient(g, p, cfg.bri_patch, *grad);
  }
  return total / patches;
}

double tv_loss(const Tensor& t, Tensor* grad) {
  prepare_grad(grad, t);
  if (t.empty()) return 0.0;
  const double norm = static_cast<double>(t.size());
  double total = 0.0;
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width(); ++x) {
        const double v = t.at(c, y, x);
        if (x + 1 < t.width()) {
          const double d = t.at(c, y, x + 1) - v;
          total += d * d;
          if (grad) {
            grad->at(c, y, x + 1) += 2.0 * d / norm;
            grad->at(c, y, x) -= 2.0 * d / norm;
          }
        }
        if (y + 1 < t.height()) {
          const double d = t.at(c, y + 1, x) - v;
          total += d * d;
          if (grad) {
            grad->at(c, y + 1, x) += 2.0 * d / norm;
            grad->at(c, y, x) -= 2.0 * d / norm;
          }
        }
      }
    }
  }
  return total / norm;
}

double sem_loss(const Tensor& probs, const LossConfig& cfg, Tensor* grad) {
  if (probs.channels() < 1 || probs.plane_size() == 0) {
    throw ArgumentError("sem_loss needs a non-empty K x H x W map");
  }
  prepare_grad(grad, probs);
  const std::size_t plane = probs.plane_size();
  const double pixels = static_cast<double>(plane);
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    double p = probs[i];
    for (int k = 1; k < probs.channels(); ++k) {
      const double v = probs[k * plane + i];
      if (v > p) {
        p = v;
        best = k;
      }
    }
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw NumericError("sem_loss: pixel " + std::to_string(i) + " has confidence " +
                         std::to_string(p));
    }
    const bool floored = p < kProbabilityFloor;
    const double q = floored ? kProbabilityFloor : p;
    const double one_minus = 1.0 - q;
    const double focal = std::pow(one_minus, cfg.gamma);
    total += -cfg.beta * focal * std::log(q);
    if (grad && !floored) {
      double d = -cfg.beta * focal / q;
      if (one_minus != 0.0) d += cfg.beta * cfg.gamma * std::pow(one_minus, cfg.gamma - 1.0) * std::log(q);
      (*grad)[best * plane + i] = d / pixels;
    }
  }
  return total / pixels;
}

double weighted_total(const LossBreakdown& parts, const LossConfig& cfg) {
  return cfg.lambda_spa * parts.spa + cfg.lambda_rgb * parts.rgb + cfg.lambda_bri * parts.bri +
         cfg.lambda_tv * parts.tv + cfg.lambda_sem * parts.sem;
}

LossBreakdown total_loss(const LossInputs& in, const LossConfig& cfg, LossGradients* grads) {
  cfg.validate();
  const bool tv_on_factor = cfg.tv_target == TvTarget::Factor;
  if (tv_on_factor && !in.factor) {
    throw ArgumentError("total_loss: TV on the factor map requested but no factor given");
  }
  auto want = [&](double lambda) { return grads != nullptr && lambda != 0.0; };

  LossBreakdown parts;
  Tensor g_spa, g_rgb, g_bri, g_tv, g_sem;
  parts.spa = spa_loss(in.enhanced, in.input, cfg, want(cfg.lambda_spa) ? &g_spa : nullptr);
  parts.rgb = rgb_loss(in.enhanced, cfg, want(cfg.lambda_rgb) ? &g_rgb : nullptr);
  parts.bri = bri_loss(in.enhanced, cfg, want(cfg.lambda_bri) ? &g_bri : nullptr);
  parts.tv = tv_loss(tv_on_factor ? *in.factor : in.enhanced, want(cfg.lambda_tv) ? &g_tv : nullptr);
  if (in.probs) parts.sem = sem_loss(*in.probs, cfg, want(cfg.lambda_sem) ? &g_sem : nullptr);
  parts.total = weighted_total(parts, cfg);

  if (grads) {
    grads->enhanced = Tensor::zeros_like(in.enhanced);
    grads->probs = in.probs ? Tensor::zeros_like(*in.probs) : Tensor();
    grads->factor = tv_on_factor ? Tensor::zeros_like(*in.factor) : Tensor();
    auto add = [](Tensor& dst, const Tensor& src, double lambda) {
      if (src.empty()) return;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += lambda * src[i];
    };
    add(grads->enhanced, g_spa, cfg.lambda_spa);
    add(grads->enhanced, g_rgb, cfg.lambda_rgb);
    add(grads->enhanced, g_bri, cfg.lambda_bri);
    add(tv_on_factor ? grads->factor : grads->enhanced, g_tv, cfg.lambda_tv);
    if (in.probs) add(grads->probs, g_sem, cfg.lambda_sem);
  }
  return parts;
}

}  // namespace sgz
