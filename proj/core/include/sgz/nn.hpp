#pragma once

#include <cstddef>
#include <vector>

#include "sgz/tensor.hpp"

// Inference layers with input-gradient backward passes. Parameters of these
// layers are never trained, so no parameter gradients are produced.
namespace sgz::nn {

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  std::vector<double> weight;  // out x in x kernel x kernel
  std::vector<double> bias;    // out, or empty for no bias

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

int conv_output_size(int in, int kernel, int stride, int padding);

Tensor conv2d(const Conv2d& conv, const Tensor& in);
Tensor conv2d_backward_input(const Conv2d& conv, const Tensor& grad_out, int in_height, int in_width);

void relu_inplace(Tensor& t);
// Zeroes gradient entries where the ReLU output was not positive.
void relu_backward(const Tensor& output, Tensor& grad);

// Max pooling with implicit -inf padding; `argmax` receives the flat source
// index of every output element.
Tensor max_pool(const Tensor& in, int kernel, int stride, int padding, std::vector<std::size_t>* argmax);
Tensor max_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                         int channels, int height, int width);

// Softmax over channels at every pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_probs);

// Reflect-pads at the bottom and right to reach height x width.
Tensor reflect_pad(const Tensor& in, int height, int width);
Tensor reflect_pad_adjoint(const Tensor& grad, int in_height, int in_width);

// Top-left height x width window, and its adjoint (zero-fill).
Tensor crop(const Tensor& in, int height, int width);
Tensor crop_adjoint(const Tensor& grad, int full_height, int full_width);

}  // namespace sgz::nn
