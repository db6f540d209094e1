#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sgz {

// Dense channel-major C x H x W array of doubles. This is the working type of
// all network and loss math; the validated user-facing image types wrap it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) {
    return Tensor(other.channels(), other.height(), other.width());
  }

  // Takes over `storage` as the buffer; element values are unspecified.
  static Tensor adopt(int channels, int height, int width, std::vector<double> storage);
  std::vector<double> take_storage() && { return std::move(data_); }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> channel(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> channel(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  bool same_shape(const Tensor& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }
  std::string shape_string() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Throws ArgumentError naming `what` when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Stacks the channels of `a` followed by the channels of `b`.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Inverse of concat_channels for gradients: splits after `first_channels`.
void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b);

double sum(const Tensor& t);
double mean(const Tensor& t);
double max_abs(const Tensor& t);
bool all_finite(const Tensor& t);

}  // namespace sgz
