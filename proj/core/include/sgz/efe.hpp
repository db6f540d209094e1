#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgz/factor.hpp"
#include "sgz/image.hpp"
#include "sgz/params.hpp"

namespace sgz {

// Enhancement-factor extraction network: a stack of 3x3 depthwise-separable
// convolution blocks with concatenating skip connections, mapping an RGB
// image to a 3-channel factor map of the same size.
//
// With `blocks` = 2e - 1, blocks 1..e form the encoder (3 -> width, then
// width -> width) and block e + j consumes concat(out[e - j], out[e + j - 1]).
// For the default 7 blocks:
//
//   b1: 3->32  b2: 32->32  b3: 32->32  b4: 32->32
//   b5: cat(b3, b4) 64->32   b6: cat(b2, b5) 64->32   b7: cat(b1, b6) 64->3
//
// Hidden blocks end in ReLU, the last one in tanh. No normalization and no
// resampling; "same" zero padding keeps the spatial size.
struct EFEConfig {
  int width = 32;
  int blocks = 7;

  void validate() const;
  bool operator==(const EFEConfig&) const = default;
};

struct BlockShape {
  int in_channels;
  int out_channels;
};

std::vector<BlockShape> efe_topology(const EFEConfig& cfg);

struct SeparableBlock {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> dw_weight;  // in x 3 x 3
  std::vector<double> dw_bias;    // in
  std::vector<double> pw_weight;  // out x in
  std::vector<double> pw_bias;    // out

  static SeparableBlock zeros(int in_channels, int out_channels);
  bool operator==(const SeparableBlock&) const = default;
};

class EFEWeights {
 public:
  EFEWeights() = default;
  EFEWeights(EFEConfig config, std::vector<SeparableBlock> blocks);

  static EFEWeights zeros(const EFEConfig& config);

  const EFEConfig& config() const { return config_; }
  const std::vector<SeparableBlock>& blocks() const { return blocks_; }
  std::vector<SeparableBlock>& blocks() { return blocks_; }

  // Arrays named block{b}.{dw,pw}.{weight,bias}, b counted from 1.
  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;

  // Throws StructuralError when the blocks do not match config's topology.
  void validate() const;

  bool operator==(const EFEWeights&) const = default;

 private:
  EFEConfig config_;
  std::vector<SeparableBlock> blocks_;
};

// Kernels i.i.d. N(0, 0.02^2), biases zero.
EFEWeights init_efe(const EFEConfig& cfg, std::uint64_t seed, double stddev = 0.02);

// Intermediate activations kept for the backward pass.
struct EfeTrace {
  Tensor image;
  std::vector<Tensor> block_inputs;
  std::vector<Tensor> dw_outputs;
  std::vector<Tensor> block_outputs;
};

EnhancementFactor efe_forward(const EFEWeights& w, const ImageTensor& img);
// Raw form used by training; fills `trace` when non-null.
Tensor efe_forward(const EFEWeights& w, const Tensor& img, EfeTrace* trace = nullptr);

// Gradient of a scalar objective with respect to every parameter, given its
// gradient with respect to the factor map. Result has the layout of `w`.
EFEWeights efe_backward(const EFEWeights& w, const EfeTrace& trace, const Tensor& grad_factor);

// Estimates the factor on a copy downscaled by `downsample` and resizes the
// factor back to full resolution. downsample = 1 is plain efe_forward.
EnhancementFactor efe_forward_reduced(const EFEWeights& w, const ImageTensor& img, int downsample);

std::size_t count_params(const EFEWeights& w);
// Multiply-accumulates of one forward pass: sum over blocks of
// (9 * C_in + C_in * C_out) * height * width.
std::uint64_t count_macs(const EFEWeights& w, int height, int width);

inline constexpr const char* kEfeArchiveKind = "sgz-efe";

void save_weights(const EFEWeights& w, const std::filesystem::path& path,
                  const nlohmann::json& metadata = nlohmann::json::object());
EFEWeights load_weights(const std::filesystem::path& path);
// Also checks every array against the topology of `expected`.
EFEWeights load_weights(const std::filesystem::path& path, const EFEConfig& expected);

}  // namespace sgz
