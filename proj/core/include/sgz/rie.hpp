#pragma once

#include <vector>

#include "sgz/factor.hpp"
#include "sgz/image.hpp"

namespace sgz {

struct RIEConfig {
  int order = 2;
  int steps = 8;

  void validate() const;
};

// One application of x <- x + r * (x^order - x), element-wise.
Tensor curve_step(const Tensor& x, const Tensor& factor, int order);
ImageTensor curve_step(const ImageTensor& x, const EnhancementFactor& factor, int order);

// Stage values x_0 .. x_{T-1} (the inputs of every step).
struct RieTrace {
  std::vector<Tensor> stages;
  Tensor output_before_clamp;
};

// `steps` applications of curve_step with one shared factor. For order 2 the
// range [0, 1] is preserved analytically and nothing is clamped; any other
// order clamps the final output to [0, 1] and logs a warning.
Tensor enhance(const Tensor& x, const Tensor& factor, const RIEConfig& cfg, RieTrace* trace = nullptr);
ImageTensor enhance(const ImageTensor& x, const EnhancementFactor& factor, const RIEConfig& cfg);

struct RieGradients {
  Tensor input;
  Tensor factor;
};

RieGradients enhance_backward(const Tensor& factor, const RieTrace& trace, const Tensor& grad_output,
                              const RIEConfig& cfg);

}  // namespace sgz
