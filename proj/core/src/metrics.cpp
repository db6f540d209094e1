#include "sgz/metrics.hpp"

#include <array>
#include <cmath>

#include "sgz/errors.hpp"

namespace sgz {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable valid-mode filtering of one channel plane.
std::vector<double> filter_valid(const double* src, int h, int w, const std::array<double, kWindow>& g) {
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[k] * src[y * w + x + k];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (std::min(h, w) < kWindow) {
    throw DegenerateInputError("ssim needs images of at least 11x11, got " + a.shape_string());
  }
  const auto g = gaussian_taps();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> xx(plane), yy(plane), xy(plane);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const double* x = a.data() + c * plane;
    const double* y = b.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx.data(), h, w, g);
    const auto syy = filter_valid(yy.data(), h, w, g);
    const auto sxy = filter_valid(xy.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

double mean_brightness(const Tensor& a) { return mean(a); }

double mse(const ImageTensor& a, const ImageTensor& b) { return mse(a.tensor(), b.tensor()); }
double psnr(const ImageTensor& a, const ImageTensor& b) { return psnr(a.tensor(), b.tensor()); }
double ssim(const ImageTensor& a, const ImageTensor& b) { return ssim(a.tensor(), b.tensor()); }
double mean_brightness(const ImageTensor& a) { return mean(a.tensor()); }

MetricReport evaluate(const ImageTensor& enhanced, const ImageTensor& reference) {
  MetricReport r;
  r.mse = mse(enhanced, reference);
  r.psnr = r.mse <= 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / r.mse));
  r.ssim = ssim(enhanced, reference);
  r.mean_brightness = mean_brightness(enhanced);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"psnr", r.psnr}, {"ssim", r.ssim}, {"mse", r.mse}, {"mean_brightness", r.mean_brightness}};
}

}  // namespace sgz
