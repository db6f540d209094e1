#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sgz/archive.hpp"
#include "sgz/image.hpp"
#include "sgz/nn.hpp"

namespace sgz {

// K x H x W per-pixel class distribution; every pixel sums to 1 within 1e-5.
class SegProbMap {
 public:
  static SegProbMap from_tensor(Tensor t);

  const Tensor& tensor() const { return data_; }
  int classes() const { return data_.channels(); }
  // Per-pixel maximum class probability.
  Tensor confidence() const;

 private:
  explicit SegProbMap(Tensor t) : data_(std::move(t)) {}
  Tensor data_;
};

using ArrayMap = std::map<std::string, NamedArray>;

struct ArraySpec {
  std::string name;
  std::vector<std::int64_t> shape;
};

// Frozen segmentation guide parameters.
//
// Backbone keys follow the torchvision ResNet-50 state_dict naming without
// the classifier: conv1.weight, bn1.{weight,bias,running_mean,running_var},
// layer{1..4}.{i}.conv{1,2,3}.weight, layer{1..4}.{i}.bn{1,2,3}.*,
// layer{1..4}.0.downsample.0.weight, layer{1..4}.0.downsample.1.*.
//
// Top-down keys: lateral{2..5}.{weight,bias}, smooth{2..5}.{0,1}.{weight,bias},
// classifier.{weight,bias}.
struct USSWeights {
  int classes = 21;
  ArrayMap backbone;
  ArrayMap topdown;
};

std::vector<ArraySpec> resnet50_layout();
std::vector<ArraySpec> topdown_layout(int classes);

inline constexpr const char* kBackboneArchiveKind = "sgz-resnet50";

// Rejects missing arrays (naming the first one in canonical order), extra
// arrays, and shape mismatches.
ArrayMap load_backbone(const std::filesystem::path& path);
void save_backbone(const ArrayMap& backbone, const std::filesystem::path& path,
                   StoredType type = StoredType::F32);
void validate_backbone(const ArrayMap& backbone);

// Seeded stand-in for pretrained weights: He-normal convolution kernels and
// identity batch-norm statistics.
ArrayMap random_backbone(std::uint64_t seed);

// All top-down kernels N(0, 0.01^2), biases zero.
ArrayMap init_topdown(std::uint64_t seed, int classes, double stddev = 0.01);

// Scalars in the backbone's convolution kernels (normalization excluded).
std::size_t count_backbone_conv_params(const ArrayMap& backbone);
std::size_t count_params(const ArrayMap& arrays);

struct UssTrace;

// Immutable network. Batch norms are folded into the preceding convolutions
// at construction; the stored arrays are never modified.
class USSNetwork {
 public:
  explicit USSNetwork(USSWeights weights);
  ~USSNetwork();
  USSNetwork(USSNetwork&&) noexcept;
  USSNetwork& operator=(USSNetwork&&) noexcept;

  const USSWeights& weights() const { return weights_; }
  int classes() const { return weights_.classes; }

  // FNV-1a over every stored array (names and bytes) in canonical order.
  std::uint64_t checksum() const;

  // H and W must be multiples of 32.
  SegProbMap forward(const ImageTensor& img) const;
  Tensor forward(const Tensor& img, UssTrace* trace) const;

  // Reflect-pads to the next multiple of 32, runs forward, crops back.
  Tensor forward_padded(const Tensor& img, UssTrace* trace) const;

  // Gradient with respect to the input image of a scalar whose gradient with
  // respect to the output probabilities is `grad_probs`. Works for traces of
  // both forward and forward_padded.
  Tensor backward_input(const UssTrace& trace, const Tensor& grad_probs) const;

 private:
  struct Compiled;
  USSWeights weights_;
  std::unique_ptr<Compiled> net_;
};

SegProbMap uss_forward(const USSNetwork& net, const ImageTensor& img);

// Opaque storage for intermediate activations.
struct UssTrace {
  UssTrace();
  ~UssTrace();
  UssTrace(UssTrace&&) noexcept;
  UssTrace& operator=(UssTrace&&) noexcept;

  struct Data;
  std::unique_ptr<Data> data;
};

}  // namespace sgz
