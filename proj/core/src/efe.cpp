#include "sgz/efe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

#include "sgz/archive.hpp"
#include "sgz/errors.hpp"

namespace sgz {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Encoder depth e for blocks = 2e - 1.
int encoder_depth(const EFEConfig& cfg) { return (cfg.blocks + 1) / 2; }

// Zero-based indices into block outputs feeding block `b` (zero-based); -1 is
// the input image.
std::vector<int> block_sources(const EFEConfig& cfg, int b) {
  const int e = encoder_depth(cfg);
  if (b < e) return {b - 1};
  const int j = b - e + 1;
  return {e - j - 1, b - 1};
}

void depthwise_forward(const Tensor& in, const SeparableBlock& blk, Tensor& out) {
  const int h = in.height();
  const int w = in.width();
  if (!out.same_shape(in)) out = Tensor(in.channels(), h, w);
  for (int c = 0; c < in.channels(); ++c) {
    const double* src = in.channel(c).data();
    double* dst = out.channel(c).data();
    const double* k = blk.dw_weight.data() + c * 9;
    const double bias = blk.dw_bias[c];
    for (int y = 0; y < h; ++y) {
      double* __restrict d = dst + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) d[x] = bias;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        const double* __restrict s = src + static_cast<std::size_t>(sy) * w;
        const double k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
        if (w == 1) {
          d[0] += k1 * s[0];
          continue;
        }
        d[0] += k1 * s[0] + k2 * s[1];
        for (int x = 1; x < w - 1; ++x) d[x] += k0 * s[x - 1] + k1 * s[x] + k2 * s[x + 1];
        d[w - 1] += k0 * s[w - 2] + k1 * s[w - 1];
      }
    }
  }
}

void depthwise_backward(const Tensor& in, const SeparableBlock& blk, const Tensor& grad_out,
                        SeparableBlock& grads, Tensor& grad_in) {
  const int h = in.height();
  const int w = in.width();
  grad_in = Tensor(in.channels(), h, w);
  for (int c = 0; c < in.channels(); ++c) {
    const double* src = in.channel(c).data();
    const double* g = grad_out.channel(c).data();
    double* gi = grad_in.channel(c).data();
    double bias_grad = 0.0;
    for (std::size_t i = 0; i < grad_out.plane_size(); ++i) bias_grad += g[i];
    grads.dw_bias[c] += bias_grad;
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int y0 = std::max(0, -dy);
      const int y1 = std::min(h, h - dy);
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        const double k = blk.dw_weight[c * 9 + ky * 3 + kx];
        double kgrad = 0.0;
        for (int y = y0; y < y1; ++y) {
          const double* s = src + (y + dy) * w + dx;
          double* si = gi + (y + dy) * w + dx;
          const double* gr = g + y * w;
          for (int x = x0; x < x1; ++x) {
            kgrad += gr[x] * s[x];
            si[x] += k * gr[x];
          }
        }
        grads.dw_weight[c * 9 + ky * 3 + kx] += kgrad;
      }
    }
  }
}

void pointwise_forward(const Tensor& in, const SeparableBlock& blk, Tensor& out) {
  const auto pixels = static_cast<Eigen::Index>(in.plane_size());
  if (out.channels() != blk.out_channels || out.height() != in.height() || out.width() != in.width()) {
    out = Tensor(blk.out_channels, in.height(), in.width());
  }
  ConstMatrixMap x(in.data(), in.channels(), pixels);
  ConstMatrixMap wt(blk.pw_weight.data(), blk.out_channels, blk.in_channels);
  MatrixMap y(out.data(), blk.out_channels, pixels);
  y.noalias() = wt * x;
  for (int o = 0; o < blk.out_channels; ++o) y.row(o).array() += blk.pw_bias[o];
}

void pointwise_backward(const Tensor& in, const SeparableBlock& blk, const Tensor& grad_out,
                        SeparableBlock& grads, Tensor& grad_in) {
  const auto pixels = static_cast<Eigen::Index>(in.plane_size());
  ConstMatrixMap x(in.data(), in.channels(), pixels);
  ConstMatrixMap g(grad_out.data(), blk.out_channels, pixels);
  ConstMatrixMap wt(blk.pw_weight.data(), blk.out_channels, blk.in_channels);
  MatrixMap gw(grads.pw_weight.data(), blk.out_channels, blk.in_channels);
  gw.noalias() += g * x.transpose();
  // Plain loop: Eigen's vectorized sum peels by address, which breaks bit-reproducibility.
  for (int o = 0; o < blk.out_channels; ++o) {
    const double* row = grad_out.channel(o).data();
    double s = 0.0;
    for (Eigen::Index i = 0; i < pixels; ++i) s += row[i];
    grads.pw_bias[o] += s;
  }
  grad_in = Tensor(in.channels(), in.height(), in.width());
  MatrixMap gi(grad_in.data(), in.channels(), pixels);
  gi.noalias() = wt.transpose() * g;
}

std::vector<std::int64_t> dw_weight_shape(const SeparableBlock& b) { return {b.in_channels, 1, 3, 3}; }
std::vector<std::int64_t> pw_weight_shape(const SeparableBlock& b) {
  return {b.out_channels, b.in_channels, 1, 1};
}

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b + 1); }

}  // namespace

EnhancementFactor EnhancementFactor::from_tensor(Tensor t) {
  if (t.channels() != 3 || t.height() < 1 || t.width() < 1) {
    throw ArgumentError("enhancement factor must be 3xHxW, got " + t.shape_string());
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= -1.0 && t[i] <= 1.0)) {
      throw ArgumentError("enhancement factor element " + std::to_string(i) + " = " +
                          std::to_string(t[i]) + " outside [-1, 1]");
    }
  }
  return EnhancementFactor(std::move(t));
}

EnhancementFactor EnhancementFactor::filled(int height, int width, double value) {
  return from_tensor(Tensor(3, height, width, value));
}

void EFEConfig::validate() const {
  if (width < 1) throw ArgumentError("EFE width must be >= 1");
  if (blocks < 1 || blocks % 2 == 0) {
    throw ArgumentError("EFE block count must be odd and >= 1, got " + std::to_string(blocks));
  }
}

std::vector<BlockShape> efe_topology(const EFEConfig& cfg) {
  cfg.validate();
  const int e = encoder_depth(cfg);
  std::vector<BlockShape> shapes;
  for (int b = 0; b < cfg.blocks; ++b) {
    const int in = b == 0 ? 3 : (b < e ? cfg.width : 2 * cfg.width);
    const int out = b == cfg.blocks - 1 ? 3 : cfg.width;
    shapes.push_back({in, out});
  }
  return shapes;
}

SeparableBlock SeparableBlock::zeros(int in_channels, int out_channels) {
  SeparableBlock b;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  b.dw_weight.assign(static_cast<std::size_t>(in_channels) * 9, 0.0);
  b.dw_bias.assign(in_channels, 0.0);
  b.pw_weight.assign(static_cast<std::size_t>(out_channels) * in_channels, 0.0);
  b.pw_bias.assign(out_channels, 0.0);
  return b;
}

EFEWeights::EFEWeights(EFEConfig config, std::vector<SeparableBlock> blocks)
    : config_(config), blocks_(std::move(blocks)) {}

EFEWeights EFEWeights::zeros(const EFEConfig& config) {
  std::vector<SeparableBlock> blocks;
  for (const auto& s : efe_topology(config)) blocks.push_back(SeparableBlock::zeros(s.in_channels, s.out_channels));
  return EFEWeights(config, std::move(blocks));
}

std::vector<ParamRef> EFEWeights::params() {
  std::vector<ParamRef> refs;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& blk = blocks_[b];
    const std::string p = block_prefix(b);
    refs.push_back({p + ".dw.weight", blk.dw_weight});
    refs.push_back({p + ".dw.bias", blk.dw_bias});
    refs.push_back({p + ".pw.weight", blk.pw_weight});
    refs.push_back({p + ".pw.bias", blk.pw_bias});
  }
  return refs;
}

std::vector<ConstParamRef> EFEWeights::params() const {
  std::vector<ConstParamRef> refs;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    const std::string p = block_prefix(b);
    refs.push_back({p + ".dw.weight", blk.dw_weight});
    refs.push_back({p + ".dw.bias", blk.dw_bias});
    refs.push_back({p + ".pw.weight", blk.pw_weight});
    refs.push_back({p + ".pw.bias", blk.pw_bias});
  }
  return refs;
}

void EFEWeights::validate() const {
  const auto shapes = efe_topology(config_);
  if (shapes.size() != blocks_.size()) {
    throw StructuralError("EFE weights have " + std::to_string(blocks_.size()) +
                          " blocks, config requires " + std::to_string(shapes.size()));
  }
  for (std::size_t b = 0; b < shapes.size(); ++b) {
    const auto& blk = blocks_[b];
    const auto& s = shapes[b];
    const bool ok = blk.in_channels == s.in_channels && blk.out_channels == s.out_channels &&
                    blk.dw_weight.size() == static_cast<std::size_t>(s.in_channels) * 9 &&
                    blk.dw_bias.size() == static_cast<std::size_t>(s.in_channels) &&
                    blk.pw_weight.size() == static_cast<std::size_t>(s.in_channels) * s.out_channels &&
                    blk.pw_bias.size() == static_cast<std::size_t>(s.out_channels);
    if (!ok) {
      throw StructuralError(block_prefix(b) + ": expected " + std::to_string(s.in_channels) + "->" +
                            std::to_string(s.out_channels) + " but weights are " +
                            std::to_string(blk.in_channels) + "->" +
                            std::to_string(blk.out_channels));
    }
  }
}

EFEWeights init_efe(const EFEConfig& cfg, std::uint64_t seed, double stddev) {
  EFEWeights w = EFEWeights::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& blk : w.blocks()) {
    for (double& v : blk.dw_weight) v = normal(rng);
    for (double& v : blk.pw_weight) v = normal(rng);
  }
  return w;
}

namespace {

// Recycles activation buffers between bands of a banded pass.
class BufferPool {
 public:
  Tensor get(int c, int h, int w) {
    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    auto it = std::find_if(free_.begin(), free_.end(), [n](const auto& v) { return v.capacity() >= n; });
    if (it == free_.end()) return Tensor(c, h, w);
    std::vector<double> storage = std::move(*it);
    free_.erase(it);
    return Tensor::adopt(c, h, w, std::move(storage));
  }
  void put(Tensor& t) {
    if (!t.empty()) free_.push_back(std::move(t).take_storage());
    t = Tensor();
  }

 private:
  std::vector<std::vector<double>> free_;
};

// Whole-image pass. Without a trace, intermediates go back to the pool after
// their last consumer so peak memory stays a few activations deep.
Tensor forward_full(const EFEWeights& w, const Tensor& img, EfeTrace* trace, BufferPool* pool) {
  const auto& cfg = w.config();
  const auto& blocks = w.blocks();
  const std::size_t n = blocks.size();
  std::vector<std::size_t> last_use(n, 0);
  for (std::size_t b = 0; b < n; ++b) {
    for (int s : block_sources(cfg, static_cast<int>(b))) {
      if (s >= 0) last_use[s] = std::max(last_use[s], b);
    }
  }
  BufferPool local;
  if (!pool) pool = &local;
  const int h = img.height();
  const int wd = img.width();
  std::vector<Tensor> outputs(n);
  std::vector<Tensor> inputs(n);
  std::vector<Tensor> dw(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto src = block_sources(cfg, static_cast<int>(b));
    const Tensor& first = src[0] < 0 ? img : outputs[src[0]];
    const Tensor* input = &first;
    if (src.size() == 2) {
      const Tensor& second = outputs[src[1]];
      inputs[b] = trace ? Tensor(first.channels() + second.channels(), h, wd)
                        : pool->get(first.channels() + second.channels(), h, wd);
      std::copy(first.values().begin(), first.values().end(), inputs[b].data());
      std::copy(second.values().begin(), second.values().end(), inputs[b].data() + first.size());
      input = &inputs[b];
    } else if (trace) {
      inputs[b] = first;
    }
    if (!trace) {
      dw[b] = pool->get(input->channels(), h, wd);
      outputs[b] = pool->get(blocks[b].out_channels, h, wd);
    }
    depthwise_forward(*input, blocks[b], dw[b]);
    pointwise_forward(dw[b], blocks[b], outputs[b]);
    if (b + 1 == n) {
      for (double& v : outputs[b].values()) v = std::tanh(v);
    } else {
      for (double& v : outputs[b].values()) v = std::max(v, 0.0);
    }
    if (!trace) {
      pool->put(inputs[b]);
      pool->put(dw[b]);
      for (int s : src) {
        if (s >= 0 && last_use[s] == b) pool->put(outputs[s]);
      }
    }
  }
  Tensor factor = trace ? outputs.back() : std::move(outputs.back());
  if (trace) {
    trace->image = img;
    trace->block_inputs = std::move(inputs);
    trace->dw_outputs = std::move(dw);
    trace->block_outputs = std::move(outputs);
  }
  return factor;
}

constexpr int kBandRows = 64;

Tensor rows(const Tensor& t, int y0, int y1) {
  Tensor out(t.channels(), y1 - y0, t.width());
  for (int c = 0; c < t.channels(); ++c) {
    const double* src = t.channel(c).data() + static_cast<std::size_t>(y0) * t.width();
    std::copy(src, src + out.plane_size(), out.channel(c).data());
  }
  return out;
}

}  // namespace

Tensor efe_forward(const EFEWeights& w, const Tensor& img, EfeTrace* trace) {
  w.validate();
  if (img.channels() != 3 || img.height() < 1 || img.width() < 1) {
    throw ArgumentError("EFE input must be 3xHxW, got " + img.shape_string());
  }
  // Every block is one 3x3 layer, so an output row depends on input rows at
  // most `halo` away; bands padded by that much reproduce the full pass.
  const int halo = static_cast<int>(w.blocks().size());
  const int h = img.height();
  if (trace || h <= kBandRows + 2 * halo) return forward_full(w, img, trace, nullptr);

  BufferPool pool;
  Tensor factor(3, h, img.width());
  for (int y0 = 0; y0 < h; y0 += kBandRows) {
    const int y1 = std::min(h, y0 + kBandRows);
    const int a = std::max(0, y0 - halo);
    const int b = std::min(h, y1 + halo);
    Tensor band = forward_full(w, rows(img, a, b), nullptr, &pool);
    for (int c = 0; c < 3; ++c) {
      const std::size_t width = img.width();
      const double* src = band.channel(c).data() + (y0 - a) * width;
      std::copy(src, src + (y1 - y0) * width, factor.channel(c).data() + y0 * width);
    }
    pool.put(band);
  }
  return factor;
}

EnhancementFactor efe_forward(const EFEWeights& w, const ImageTensor& img) {
  return EnhancementFactor::from_tensor(efe_forward(w, img.tensor(), nullptr));
}

EFEWeights efe_backward(const EFEWeights& w, const EfeTrace& trace, const Tensor& grad_factor) {
  const auto& cfg = w.config();
  const auto& blocks = w.blocks();
  const std::size_t n = blocks.size();
  if (trace.block_outputs.size() != n) throw InternalError("EFE trace does not match weights");
  require_same_shape(grad_factor, trace.block_outputs.back(), "efe_backward");

  EFEWeights grads = EFEWeights::zeros(cfg);
  std::vector<Tensor> grad_out(n);
  grad_out[n - 1] = grad_factor;
  for (std::size_t b = n; b-- > 0;) {
    Tensor g = std::move(grad_out[b]);
    if (g.empty()) continue;
    const Tensor& out = trace.block_outputs[b];
    if (b + 1 == n) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - out[i] * out[i];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (out[i] <= 0.0) g[i] = 0.0;
      }
    }
    Tensor g_dw;
    pointwise_backward(trace.dw_outputs[b], blocks[b], g, grads.blocks()[b], g_dw);
    Tensor g_in;
    depthwise_backward(trace.block_inputs[b], blocks[b], g_dw, grads.blocks()[b], g_in);

    const auto src = block_sources(cfg, static_cast<int>(b));
    auto accumulate = [&](int index, Tensor part) {
      if (index < 0) return;
      if (grad_out[index].empty()) {
        grad_out[index] = std::move(part);
      } else {
        grad_out[index] += part;
      }
    };
    if (src.size() == 1) {
      accumulate(src[0], std::move(g_in));
    } else {
      Tensor a;
      Tensor c;
      const int first_channels = src[0] < 0 ? 3 : trace.block_outputs[src[0]].channels();
      split_channels(g_in, first_channels, a, c);
      accumulate(src[0], std::move(a));
      accumulate(src[1], std::move(c));
    }
  }
  return grads;
}

EnhancementFactor efe_forward_reduced(const EFEWeights& w, const ImageTensor& img, int downsample) {
  if (downsample < 1) throw ArgumentError("downsample factor must be >= 1");
  if (downsample == 1) return efe_forward(w, img);
  const int h = std::max(1, (img.height() + downsample - 1) / downsample);
  const int wd = std::max(1, (img.width() + downsample - 1) / downsample);
  const Tensor small = resize_bilinear(img.tensor(), h, wd);
  Tensor factor = resize_bilinear(efe_forward(w, small, nullptr), img.height(), img.width());
  for (double& v : factor.values()) v = std::clamp(v, -1.0, 1.0);
  return EnhancementFactor::from_tensor(std::move(factor));
}

std::size_t count_params(const EFEWeights& w) {
  std::size_t n = 0;
  for (const auto& blk : w.blocks()) {
    n += blk.dw_weight.size() + blk.dw_bias.size() + blk.pw_weight.size() + blk.pw_bias.size();
  }
  return n;
}

std::uint64_t count_macs(const EFEWeights& w, int height, int width) {
  if (height < 1 || width < 1) throw ArgumentError("count_macs: size must be positive");
  std::uint64_t per_pixel = 0;
  for (const auto& blk : w.blocks()) {
    per_pixel += 9ull * blk.in_channels + static_cast<std::uint64_t>(blk.in_channels) * blk.out_channels;
  }
  return per_pixel * static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
}

void save_weights(const EFEWeights& w, const std::filesystem::path& path,
                  const nlohmann::json& metadata) {
  w.validate();
  Archive archive;
  archive.kind = kEfeArchiveKind;
  archive.metadata = metadata.is_object() ? metadata : nlohmann::json::object();
  archive.metadata["config"] = {{"width", w.config().width}, {"blocks", w.config().blocks}};
  for (std::size_t b = 0; b < w.blocks().size(); ++b) {
    const auto& blk = w.blocks()[b];
    const std::string p = block_prefix(b);
    archive.add(p + ".dw.weight", {dw_weight_shape(blk), blk.dw_weight});
    archive.add(p + ".dw.bias", {{blk.in_channels}, blk.dw_bias});
    archive.add(p + ".pw.weight", {pw_weight_shape(blk), blk.pw_weight});
    archive.add(p + ".pw.bias", {{blk.out_channels}, blk.pw_bias});
  }
  write_archive(archive, path);
}

namespace {

EFEWeights weights_from_archive(const Archive& archive, const EFEConfig& cfg,
                                const std::filesystem::path& path) {
  EFEWeights w = EFEWeights::zeros(cfg);
  std::size_t expected_arrays = 0;
  for (std::size_t b = 0; b < w.blocks().size(); ++b) {
    auto& blk = w.blocks()[b];
    const std::string p = block_prefix(b);
    auto take = [&](const std::string& name, const std::vector<std::int64_t>& shape,
                    std::vector<double>& dst) {
      ++expected_arrays;
      if (!archive.contains(name)) {
        throw StructuralError(path.string() + ": missing array " + name);
      }
      const NamedArray& a = archive.get(name);
      if (a.shape != shape) {
        NamedArray want{shape, {}};
        throw StructuralError(path.string() + ": " + name + " has shape " + a.shape_string() +
                              ", expected " + want.shape_string() + " for " + p);
      }
      dst = a.values;
    };
    take(p + ".dw.weight", dw_weight_shape(blk), blk.dw_weight);
    take(p + ".dw.bias", {blk.in_channels}, blk.dw_bias);
    take(p + ".pw.weight", pw_weight_shape(blk), blk.pw_weight);
    take(p + ".pw.bias", {blk.out_channels}, blk.pw_bias);
  }
  if (archive.arrays.size() != expected_arrays) {
    for (const auto& name : archive.order) {
      bool known = false;
      for (const auto& ref : w.params()) known = known || ref.name == name;
      if (!known) throw StructuralError(path.string() + ": unexpected array " + name);
    }
  }
  return w;
}

EFEConfig stored_config(const Archive& archive, const std::filesystem::path& path) {
  try {
    const auto& c = archive.metadata.at("config");
    EFEConfig cfg{c.at("width").get<int>(), c.at("blocks").get<int>()};
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": checkpoint manifest lacks a valid config: " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

EFEWeights load_weights(const std::filesystem::path& path) {
  const Archive archive = read_archive(path, kEfeArchiveKind);
  return weights_from_archive(archive, stored_config(archive, path), path);
}

EFEWeights load_weights(const std::filesystem::path& path, const EFEConfig& expected) {
  const Archive archive = read_archive(path, kEfeArchiveKind);
  stored_config(archive, path);
  return weights_from_archive(archive, expected, path);
}

}  // namespace sgz
