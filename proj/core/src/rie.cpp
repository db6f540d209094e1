#include "sgz/rie.hpp"

#include <algorithm>
#include <cmath>

#include "sgz/errors.hpp"
#include "sgz/log.hpp"

namespace sgz {
namespace {

double ipow(double v, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= v;
  return r;
}

}  // namespace

void RIEConfig::validate() const {
  if (order < 1) throw ArgumentError("curve order must be >= 1, got " + std::to_string(order));
  if (steps < 1) throw ArgumentError("recurrence steps must be >= 1, got " + std::to_string(steps));
}

Tensor curve_step(const Tensor& x, const Tensor& factor, int order) {
  require_same_shape(x, factor, "curve_step");
  if (order < 1) throw ArgumentError("curve order must be >= 1");
  Tensor out(x.channels(), x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = v + factor[i] * (ipow(v, order) - v);
  }
  return out;
}

ImageTensor curve_step(const ImageTensor& x, const EnhancementFactor& factor, int order) {
  Tensor out = curve_step(x.tensor(), factor.tensor(), order);
  if (order != 2) {
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  }
  return ImageTensor::from_tensor(std::move(out));
}

Tensor enhance(const Tensor& x, const Tensor& factor, const RIEConfig& cfg, RieTrace* trace) {
  cfg.validate();
  require_same_shape(x, factor, "enhance");
  if (trace) trace->stages.clear();
  Tensor current = x;
  for (int t = 0; t < cfg.steps; ++t) {
    Tensor next = curve_step(current, factor, cfg.order);
    if (trace) trace->stages.push_back(std::move(current));
    current = std::move(next);
  }
  if (cfg.order != 2) {
    if (trace) trace->output_before_clamp = current;
    bool clamped = false;
    for (double& v : current.values()) {
      const double c = std::clamp(v, 0.0, 1.0);
      clamped = clamped || c != v;
      v = c;
    }
    if (clamped) {
      log::warn("curve order " + std::to_string(cfg.order) + " left [0, 1]; output clamped");
    }
  }
  return current;
}

ImageTensor enhance(const ImageTensor& x, const EnhancementFactor& factor, const RIEConfig& cfg) {
  Tensor out = enhance(x.tensor(), factor.tensor(), cfg, nullptr);
  if (cfg.order == 2) {
    // Exact in real arithmetic; absorb last-ulp excursions.
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  }
  return ImageTensor::from_tensor(std::move(out));
}

RieGradients enhance_backward(const Tensor& factor, const RieTrace& trace, const Tensor& grad_output,
                              const RIEConfig& cfg) {
  if (trace.stages.size() != static_cast<std::size_t>(cfg.steps)) {
    throw InternalError("RIE trace length does not match step count");
  }
  require_same_shape(factor, grad_output, "enhance_backward");
  const int n = cfg.order;
  Tensor g = grad_output;
  if (n != 2) {
    const Tensor& raw = trace.output_before_clamp;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (raw[i] < 0.0 || raw[i] > 1.0) g[i] = 0.0;
    }
  }
  Tensor g_factor = Tensor::zeros_like(factor);
  for (int t = cfg.steps - 1; t >= 0; --t) {
    const Tensor& x = trace.stages[t];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double r = factor[i];
      const double pn1 = ipow(v, n - 1);
      g_factor[i] += g[i] * (pn1 * v - v);
      g[i] *= 1.0 + r * (n * pn1 - 1.0);
    }
  }
  return {std::move(g), std::move(g_factor)};
}

}  // namespace sgz
