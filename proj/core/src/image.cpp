#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "sgz/errors.hpp"
#include "sgz/image.hpp"

namespace sgz {

ImageTensor ImageTensor::from_tensor(Tensor t) {
  if (t.channels() != 3) {
    throw ArgumentError("image must have 3 channels, got " + std::to_string(t.channels()));
  }
  if (t.height() < 1 || t.width() < 1) {
    throw ArgumentError("image must be at least 1x1, got " + t.shape_string());
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ArgumentError("image element " + std::to_string(i) + " = " + std::to_string(v) +
                          " outside [0, 1]");
    }
  }
  return ImageTensor(std::move(t));
}

ImageTensor ImageTensor::filled(int height, int width, double value) {
  return from_tensor(Tensor(3, height, width, value));
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Align-corners source coordinate for every output index.
std::vector<Tap> align_corner_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
  for (int i = 0; i < out; ++i) {
    const double src = i * scale;
    int lo = static_cast<int>(std::floor(src));
    lo = std::clamp(lo, 0, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

void require_positive(int height, int width, const char* what) {
  if (height < 1 || width < 1) {
    throw ArgumentError(std::string(what) + ": target size must be positive, got " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

Tensor resize_bilinear(const Tensor& img, int height, int width) {
  require_positive(height, width, "resize_bilinear");
  if (img.height() == height && img.width() == width) return img;
  const auto ty = align_corner_taps(img.height(), height);
  const auto tx = align_corner_taps(img.width(), width);
  Tensor out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        const double top = img.at(c, a.lo, b.lo) * (1.0 - b.frac) + img.at(c, a.lo, b.hi) * b.frac;
        const double bottom =
            img.at(c, a.hi, b.lo) * (1.0 - b.frac) + img.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1.0 - a.frac) + bottom * a.frac;
      }
    }
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int height, int width) {
  Tensor out = resize_bilinear(img.tensor(), height, width);
  // Convex combinations stay in range up to rounding.
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor::from_tensor(std::move(out));
}

Tensor resize_bilinear_adjoint(const Tensor& grad, int in_height, int in_width) {
  require_positive(in_height, in_width, "resize_bilinear_adjoint");
  if (grad.height() == in_height && grad.width() == in_width) return grad;
  const auto ty = align_corner_taps(in_height, grad.height());
  const auto tx = align_corner_taps(in_width, grad.width());
  Tensor out(grad.channels(), in_height, in_width);
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < grad.height(); ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < grad.width(); ++x) {
        const Tap& b = tx[x];
        const double g = grad.at(c, y, x);
        out.at(c, a.lo, b.lo) += g * (1.0 - a.frac) * (1.0 - b.frac);
        out.at(c, a.lo, b.hi) += g * (1.0 - a.frac) * b.frac;
        out.at(c, a.hi, b.lo) += g * a.frac * (1.0 - b.frac);
        out.at(c, a.hi, b.hi) += g * a.frac * b.frac;
      }
    }
  }
  return out;
}

ImageTensor gamma_darken(const ImageTensor& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ArgumentError("gamma must be positive, got " + std::to_string(gamma));
  }
  Tensor out = img.tensor();
  for (double& v : out.values()) v = std::pow(v, gamma);
  return ImageTensor::from_tensor(std::move(out));
}

void DatasetSpec::validate() const {
  if (!std::filesystem::is_directory(root)) {
    throw ArgumentError("dataset root is not a directory: " + root.string());
  }
  if (target_height < 16 || target_width < 16) {
    throw ArgumentError("dataset target size must be at least 16x16, got " +
                        std::to_string(target_height) + "x" + std::to_string(target_width));
  }
}

std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return files;
}

DatasetStream::DatasetStream(const DatasetSpec& spec) : spec_(spec) {
  spec_.validate();
  for (auto& path : list_image_files(spec_.root)) {
    const std::string stem = path.stem().string();
    if (!spec_.stem_suffix.empty() &&
        (stem.size() < spec_.stem_suffix.size() ||
         stem.compare(stem.size() - spec_.stem_suffix.size(), std::string::npos,
                      spec_.stem_suffix) != 0)) {
      continue;
    }
    files_.push_back(std::move(path));
  }
  if (files_.empty()) {
    throw EmptyDatasetError("no image files in " + spec_.root.string());
  }
  std::mt19937_64 rng(spec_.shuffle_seed);
  for (std::size_t i = files_.size() - 1; i > 0; --i) {
    std::swap(files_[i], files_[rng() % (i + 1)]);
  }
}

std::optional<ImageTensor> DatasetStream::next() {
  while (cursor_ < files_.size()) {
    const auto& path = files_[cursor_++];
    try {
      return resize_bilinear(load_image(path), spec_.target_height, spec_.target_width);
    } catch (const Error& e) {
      warnings_.push_back("skipped " + path.string() + ": " + e.what());
    }
  }
  return std::nullopt;
}

DatasetStream iterate_dataset(const DatasetSpec& spec) { return DatasetStream(spec); }

std::vector<ImageTensor> load_dataset(const DatasetSpec& spec, std::vector<std::string>* warnings) {
  DatasetStream stream(spec);
  std::vector<ImageTensor> images;
  while (auto img = stream.next()) images.push_back(std::move(*img));
  if (warnings) {
    warnings->insert(warnings->end(), stream.warnings().begin(), stream.warnings().end());
  }
  if (images.empty()) {
    throw EmptyDatasetError("no readable images in " + spec.root.string());
  }
  return images;
}

}  // namespace sgz
