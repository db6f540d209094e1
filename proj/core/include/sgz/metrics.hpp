#pragma once

#include <nlohmann/json.hpp>

#include "sgz/image.hpp"

namespace sgz {

inline constexpr double kPsnrCap = 100.0;

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double mean_brightness = 0.0;  // of the first (enhanced) image
};

double mse(const Tensor& a, const Tensor& b);
double psnr(const Tensor& a, const Tensor& b);
// 11x11 Gaussian window (sigma 1.5), valid region, averaged over channels.
double ssim(const Tensor& a, const Tensor& b);
double mean_brightness(const Tensor& a);

double mse(const ImageTensor& a, const ImageTensor& b);
double psnr(const ImageTensor& a, const ImageTensor& b);
double ssim(const ImageTensor& a, const ImageTensor& b);
double mean_brightness(const ImageTensor& a);

MetricReport evaluate(const ImageTensor& enhanced, const ImageTensor& reference);

nlohmann::json to_json(const MetricReport& r);

}  // namespace sgz
