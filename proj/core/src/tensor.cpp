#include "sgz/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgz/errors.hpp"

namespace sgz {

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    throw ArgumentError("tensor dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Tensor Tensor::adopt(int channels, int height, int width, std::vector<double> storage) {
  if (channels < 0 || height < 0 || width < 0) {
    throw ArgumentError("tensor dimensions must be non-negative");
  }
  Tensor t;
  t.channels_ = channels;
  t.height_ = height;
  t.width_ = width;
  t.data_ = std::move(storage);
  t.data_.resize(static_cast<std::size_t>(channels) * height * width);
  return t;
}

std::string Tensor::shape_string() const {
  return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ArgumentError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                        b.shape_string());
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ArgumentError("concat_channels: spatial mismatch " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b) {
  const int h = joined.height();
  const int w = joined.width();
  a = Tensor(first_channels, h, w);
  b = Tensor(joined.channels() - first_channels, h, w);
  std::copy(joined.data(), joined.data() + a.size(), a.data());
  std::copy(joined.data() + a.size(), joined.data() + joined.size(), b.data());
}

double sum(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

double mean(const Tensor& t) { return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size()); }

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sgz
