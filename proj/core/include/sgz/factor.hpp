#pragma once

#include "sgz/tensor.hpp"

namespace sgz {

// Per-pixel, per-channel enhancement factor (3 x H x W). The network emits it
// through tanh, so values lie in (-1, 1); in floating point a saturated tanh
// may round to exactly +-1, which is why validation accepts the closed range.
class EnhancementFactor {
 public:
  static EnhancementFactor from_tensor(Tensor t);
  static EnhancementFactor filled(int height, int width, double value);

  const Tensor& tensor() const { return data_; }
  int height() const { return data_.height(); }
  int width() const { return data_.width(); }

 private:
  explicit EnhancementFactor(Tensor t) : data_(std::move(t)) {}
  Tensor data_;
};

}  // namespace sgz
