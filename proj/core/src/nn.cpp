#include "sgz/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "sgz/errors.hpp"

namespace sgz::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

bool is_pointwise(const Conv2d& conv) {
  return conv.kernel == 1 && conv.stride == 1 && conv.padding == 0;
}

// Rows ordered (channel, ky, kx), columns by output pixel.
RowMatrix im2col(const Conv2d& conv, const Tensor& in, int out_h, int out_w) {
  const int k = conv.kernel;
  RowMatrix cols(static_cast<Eigen::Index>(in.channels()) * k * k,
                 static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < in.channels(); ++c) {
    const double* src = in.channel(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * conv.stride - conv.padding + ky;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= in.height()) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * in.width();
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * conv.stride - conv.padding + kx;
            dst[ox] = (ix >= 0 && ix < in.width()) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Conv2d& conv, const RowMatrix& cols, int out_h, int out_w, Tensor& grad_in) {
  const int k = conv.kernel;
  for (int c = 0; c < grad_in.channels(); ++c) {
    double* dst = grad_in.channel(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * conv.stride - conv.padding + ky;
          if (iy < 0 || iy >= grad_in.height()) continue;
          double* line = dst + static_cast<std::size_t>(iy) * grad_in.width();
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * conv.stride - conv.padding + kx;
            if (ix >= 0 && ix < grad_in.width()) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv(const Conv2d& conv, int channels) {
  if (conv.weight.size() != conv.weight_count()) {
    throw StructuralError("conv weight has " + std::to_string(conv.weight.size()) +
                          " values, expected " + std::to_string(conv.weight_count()));
  }
  if (!conv.bias.empty() && conv.bias.size() != static_cast<std::size_t>(conv.out_channels)) {
    throw StructuralError("conv bias size mismatch");
  }
  if (channels != conv.in_channels) {
    throw StructuralError("conv expects " + std::to_string(conv.in_channels) + " input channels, got " +
                          std::to_string(channels));
  }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

int conv_output_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Conv2d& conv, const Tensor& in) {
  check_conv(conv, in.channels());
  const int out_h = conv_output_size(in.height(), conv.kernel, conv.stride, conv.padding);
  const int out_w = conv_output_size(in.width(), conv.kernel, conv.stride, conv.padding);
  if (out_h < 1 || out_w < 1) throw DegenerateInputError("conv input " + in.shape_string() + " too small");
  Tensor out(conv.out_channels, out_h, out_w);
  const auto pixels = static_cast<Eigen::Index>(out_h) * out_w;
  const Eigen::Index fan_in = static_cast<Eigen::Index>(conv.in_channels) * conv.kernel * conv.kernel;
  ConstMatrixMap w(conv.weight.data(), conv.out_channels, fan_in);
  MatrixMap y(out.data(), conv.out_channels, pixels);
  if (is_pointwise(conv)) {
    y.noalias() = w * ConstMatrixMap(in.data(), in.channels(), pixels);
  } else {
    y.noalias() = w * im2col(conv, in, out_h, out_w);
  }
  if (!conv.bias.empty()) {
    for (int o = 0; o < conv.out_channels; ++o) y.row(o).array() += conv.bias[o];
  }
  return out;
}

Tensor conv2d_backward_input(const Conv2d& conv, const Tensor& grad_out, int in_height, int in_width) {
  const auto pixels = static_cast<Eigen::Index>(grad_out.plane_size());
  const Eigen::Index fan_in = static_cast<Eigen::Index>(conv.in_channels) * conv.kernel * conv.kernel;
  ConstMatrixMap w(conv.weight.data(), conv.out_channels, fan_in);
  ConstMatrixMap g(grad_out.data(), conv.out_channels, pixels);
  Tensor grad_in(conv.in_channels, in_height, in_width);
  if (is_pointwise(conv)) {
    MatrixMap(grad_in.data(), conv.in_channels, pixels).noalias() = w.transpose() * g;
  } else {
    RowMatrix cols = w.transpose() * g;
    col2im(conv, cols, grad_out.height(), grad_out.width(), grad_in);
  }
  return grad_in;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
}

void relu_backward(const Tensor& output, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (output[i] <= 0.0) grad[i] = 0.0;
  }
}

Tensor max_pool(const Tensor& in, int kernel, int stride, int padding, std::vector<std::size_t>* argmax) {
  const int out_h = conv_output_size(in.height(), kernel, stride, padding);
  const int out_w = conv_output_size(in.width(), kernel, stride, padding);
  Tensor out(in.channels(), out_h, out_w);
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < in.channels(); ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_index = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= in.height()) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= in.width()) continue;
            const double v = in.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_index = (static_cast<std::size_t>(c) * in.height() + iy) * in.width() + ix;
            }
          }
        }
        out[o] = best;
        if (argmax) (*argmax)[o] = best_index;
      }
    }
  }
  return out;
}

Tensor max_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax, int channels,
                         int height, int width) {
  Tensor grad_in(channels, height, width);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor p = Tensor::zeros_like(logits);
  const std::size_t plane = logits.plane_size();
  const int k = logits.channels();
  for (std::size_t i = 0; i < plane; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) m = std::max(m, logits[c * plane + i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = std::exp(logits[c * plane + i] - m);
      p[c * plane + i] = e;
      z += e;
    }
    for (int c = 0; c < k; ++c) p[c * plane + i] /= z;
  }
  return p;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_probs) {
  Tensor g = Tensor::zeros_like(probs);
  const std::size_t plane = probs.plane_size();
  const int k = probs.channels();
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0.0;
    for (int c = 0; c < k; ++c) dot += probs[c * plane + i] * grad_probs[c * plane + i];
    for (int c = 0; c < k; ++c) {
      g[c * plane + i] = probs[c * plane + i] * (grad_probs[c * plane + i] - dot);
    }
  }
  return g;
}

Tensor reflect_pad(const Tensor& in, int height, int width) {
  if (height < in.height() || width < in.width()) throw ArgumentError("reflect_pad cannot shrink");
  Tensor out(in.channels(), height, width);
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      const int sy = reflect_index(y, in.height());
      for (int x = 0; x < width; ++x) out.at(c, y, x) = in.at(c, sy, reflect_index(x, in.width()));
    }
  }
  return out;
}

Tensor reflect_pad_adjoint(const Tensor& grad, int in_height, int in_width) {
  Tensor out(grad.channels(), in_height, in_width);
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < grad.height(); ++y) {
      const int sy = reflect_index(y, in_height);
      for (int x = 0; x < grad.width(); ++x) out.at(c, sy, reflect_index(x, in_width)) += grad.at(c, y, x);
    }
  }
  return out;
}

Tensor crop(const Tensor& in, int height, int width) {
  Tensor out(in.channels(), height, width);
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.at(c, y, x) = in.at(c, y, x);
    }
  }
  return out;
}

Tensor crop_adjoint(const Tensor& grad, int full_height, int full_width) {
  Tensor out(grad.channels(), full_height, full_width);
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < grad.height(); ++y) {
      for (int x = 0; x < grad.width(); ++x) out.at(c, y, x) = grad.at(c, y, x);
    }
  }
  return out;
}

}  // namespace sgz::nn
