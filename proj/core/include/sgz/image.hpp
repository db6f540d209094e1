#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgz/tensor.hpp"

namespace sgz {

// A 3 x H x W RGB image with every element finite and inside [0, 1].
class ImageTensor {
 public:
  // Validates the invariants; throws ArgumentError naming the first violation.
  static ImageTensor from_tensor(Tensor t);
  static ImageTensor filled(int height, int width, double value);

  const Tensor& tensor() const { return data_; }
  Tensor release() && { return std::move(data_); }

  int height() const { return data_.height(); }
  int width() const { return data_.width(); }
  double at(int c, int y, int x) const { return data_.at(c, y, x); }

  bool operator==(const ImageTensor& other) const = default;

 private:
  explicit ImageTensor(Tensor t) : data_(std::move(t)) {}
  Tensor data_;
};

// 8-bit RGB PNG or JPEG; bytes map linearly to v = byte / 255 with no sRGB
// linearization. Throws IoError or UnsupportedFormatError.
ImageTensor load_image(const std::filesystem::path& path);

// Writes PNG, or JPEG when the extension is .jpg/.jpeg. Each element maps to
// round(v * 255) clamped to [0, 255].
void save_image(const ImageTensor& img, const std::filesystem::path& path);

// Bilinear resampling with the align-corners convention: output corner
// samples coincide with input corner samples. Works on any channel count.
Tensor resize_bilinear(const Tensor& img, int height, int width);
ImageTensor resize_bilinear(const ImageTensor& img, int height, int width);

// Adjoint of resize_bilinear: maps a gradient on the resized grid back onto
// the source grid of size in_height x in_width.
Tensor resize_bilinear_adjoint(const Tensor& grad, int in_height, int in_width);

// Element-wise v -> v^gamma.
ImageTensor gamma_darken(const ImageTensor& img, double gamma);

struct DatasetSpec {
  std::filesystem::path root;
  int target_height = 512;
  int target_width = 512;
  std::uint64_t shuffle_seed = 0;
  // When non-empty, only files whose stem ends with this suffix are used
  // (e.g. "_dark" to train on the dark half of a synthesized pair set).
  std::string stem_suffix;

  void validate() const;
};

// Lazily decodes and resizes the images of a directory in a seeded order.
// Unreadable files are skipped and recorded in warnings().
class DatasetStream {
 public:
  explicit DatasetStream(const DatasetSpec& spec);

  std::optional<ImageTensor> next();

  const std::vector<std::filesystem::path>& files() const { return files_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  DatasetSpec spec_;
  std::vector<std::filesystem::path> files_;
  std::size_t cursor_ = 0;
  std::vector<std::string> warnings_;
};

DatasetStream iterate_dataset(const DatasetSpec& spec);

// Drains a stream into memory. Throws EmptyDatasetError when nothing was
// readable. Warnings are appended to `warnings` when provided.
std::vector<ImageTensor> load_dataset(const DatasetSpec& spec,
                                      std::vector<std::string>* warnings = nullptr);

// Image files (.png/.jpg/.jpeg, case-insensitive) directly inside `dir`,
// sorted by file name.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

}  // namespace sgz
