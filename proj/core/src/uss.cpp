#include "sgz/uss.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "sgz/errors.hpp"

namespace sgz {
namespace {

constexpr double kBnEps = 1e-5;
constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};
constexpr int kFeatures = 256;
constexpr int kStride = 32;

struct StageSpec {
  int planes;
  int blocks;
  int stride;
};
constexpr StageSpec kStages[4] = {{64, 3, 1}, {128, 4, 2}, {256, 6, 2}, {512, 3, 2}};
constexpr int kStageChannels[4] = {256, 512, 1024, 2048};

void add_bn(std::vector<ArraySpec>& out, const std::string& prefix, int channels) {
  for (const char* field : {"weight", "bias", "running_mean", "running_var"}) {
    out.push_back({prefix + "." + field, {channels}});
  }
}

std::string block_name(int stage, int index) {
  return "layer" + std::to_string(stage + 1) + "." + std::to_string(index);
}

bool is_conv_key(const std::string& name, const NamedArray& a) {
  return a.shape.size() == 4 && name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

void check_layout(const ArrayMap& arrays, const std::vector<ArraySpec>& layout, const std::string& what) {
  for (const auto& spec : layout) {
    auto it = arrays.find(spec.name);
    if (it == arrays.end()) throw StructuralError(what + ": missing array " + spec.name);
    if (it->second.shape != spec.shape) {
      NamedArray want{spec.shape, {}};
      throw StructuralError(what + ": " + spec.name + " has shape " + it->second.shape_string() +
                            ", expected " + want.shape_string());
    }
    if (it->second.values.size() != it->second.element_count()) {
      throw StructuralError(what + ": " + spec.name + " value count mismatch");
    }
  }
  if (arrays.size() != layout.size()) {
    for (const auto& [name, _] : arrays) {
      bool known = false;
      for (const auto& spec : layout) known = known || spec.name == name;
      if (!known) throw StructuralError(what + ": unexpected array " + name);
    }
  }
}

nn::Conv2d make_conv(const NamedArray& w, const NamedArray* bias, int stride, int padding) {
  nn::Conv2d c;
  c.out_channels = static_cast<int>(w.shape[0]);
  c.in_channels = static_cast<int>(w.shape[1]);
  c.kernel = static_cast<int>(w.shape[2]);
  c.stride = stride;
  c.padding = padding;
  c.weight = w.values;
  if (bias) c.bias = bias->values;
  return c;
}

// Convolution followed by inference-mode batch norm, folded into one conv.
nn::Conv2d fold_conv_bn(const ArrayMap& a, const std::string& conv, const std::string& bn, int stride,
                        int padding) {
  nn::Conv2d c = make_conv(a.at(conv + ".weight"), nullptr, stride, padding);
  const auto& gamma = a.at(bn + ".weight").values;
  const auto& beta = a.at(bn + ".bias").values;
  const auto& mean = a.at(bn + ".running_mean").values;
  const auto& var = a.at(bn + ".running_var").values;
  const std::size_t per_out = c.weight.size() / c.out_channels;
  c.bias.resize(c.out_channels);
  for (int o = 0; o < c.out_channels; ++o) {
    const double scale = gamma[o] / std::sqrt(var[o] + kBnEps);
    for (std::size_t i = 0; i < per_out; ++i) c.weight[o * per_out + i] *= scale;
    c.bias[o] = beta[o] - mean[o] * scale;
  }
  return c;
}

struct Bottleneck {
  nn::Conv2d conv1, conv2, conv3;
  bool has_downsample = false;
  nn::Conv2d downsample;
};

struct SmoothPair {
  nn::Conv2d first, second;
};

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

SegProbMap SegProbMap::from_tensor(Tensor t) {
  if (t.channels() < 1 || t.plane_size() == 0) throw ArgumentError("probability map must be non-empty");
  const std::size_t plane = t.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (int k = 0; k < t.channels(); ++k) {
      const double v = t[k * plane + i];
      if (!(v >= 0.0)) throw ArgumentError("probability map has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw ArgumentError("probability map pixel " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  return SegProbMap(std::move(t));
}

Tensor SegProbMap::confidence() const {
  Tensor c(1, data_.height(), data_.width());
  const std::size_t plane = data_.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    double m = data_[i];
    for (int k = 1; k < data_.channels(); ++k) m = std::max(m, data_[k * plane + i]);
    c[i] = m;
  }
  return c;
}

std::vector<ArraySpec> resnet50_layout() {
  std::vector<ArraySpec> out;
  out.push_back({"conv1.weight", {64, 3, 7, 7}});
  add_bn(out, "bn1", 64);
  int inplanes = 64;
  for (int s = 0; s < 4; ++s) {
    const int planes = kStages[s].planes;
    for (int b = 0; b < kStages[s].blocks; ++b) {
      const std::string p = block_name(s, b);
      out.push_back({p + ".conv1.weight", {planes, inplanes, 1, 1}});
      add_bn(out, p + ".bn1", planes);
      out.push_back({p + ".conv2.weight", {planes, planes, 3, 3}});
      add_bn(out, p + ".bn2", planes);
      out.push_back({p + ".conv3.weight", {planes * 4, planes, 1, 1}});
      add_bn(out, p + ".bn3", planes * 4);
      if (b == 0) {
        out.push_back({p + ".downsample.0.weight", {planes * 4, inplanes, 1, 1}});
        add_bn(out, p + ".downsample.1", planes * 4);
      }
      inplanes = planes * 4;
    }
  }
  return out;
}

std::vector<ArraySpec> topdown_layout(int classes) {
  if (classes < 2) throw ArgumentError("class count must be >= 2, got " + std::to_string(classes));
  std::vector<ArraySpec> out;
  for (int l = 2; l <= 5; ++l) {
    const std::string p = "lateral" + std::to_string(l);
    out.push_back({p + ".weight", {kFeatures, kStageChannels[l - 2], 1, 1}});
    out.push_back({p + ".bias", {kFeatures}});
  }
  for (int l = 2; l <= 5; ++l) {
    const std::string p = "smooth" + std::to_string(l);
    const int in = l == 5 ? kFeatures : 2 * kFeatures;
    out.push_back({p + ".0.weight", {kFeatures, in, 3, 3}});
    out.push_back({p + ".0.bias", {kFeatures}});
    out.push_back({p + ".1.weight", {kFeatures, kFeatures, 3, 3}});
    out.push_back({p + ".1.bias", {kFeatures}});
  }
  out.push_back({"classifier.weight", {classes, 4 * kFeatures, 1, 1}});
  out.push_back({"classifier.bias", {classes}});
  return out;
}

void validate_backbone(const ArrayMap& backbone) { check_layout(backbone, resnet50_layout(), "backbone"); }

ArrayMap load_backbone(const std::filesystem::path& path) {
  Archive archive = read_archive(path, kBackboneArchiveKind);
  ArrayMap arrays = std::move(archive.arrays);
  check_layout(arrays, resnet50_layout(), path.string());
  return arrays;
}

void save_backbone(const ArrayMap& backbone, const std::filesystem::path& path, StoredType type) {
  Archive archive;
  archive.kind = kBackboneArchiveKind;
  archive.metadata["architecture"] = "resnet50";
  // Canonical order first, then anything else (lets tests write bad archives).
  for (const auto& spec : resnet50_layout()) {
    auto it = backbone.find(spec.name);
    if (it != backbone.end()) archive.add(spec.name, it->second);
  }
  for (const auto& [name, a] : backbone) {
    if (!archive.contains(name)) archive.add(name, a);
  }
  write_archive(archive, path, type);
}

ArrayMap random_backbone(std::uint64_t seed) {
  ArrayMap out;
  std::mt19937_64 rng(seed);
  for (const auto& spec : resnet50_layout()) {
    NamedArray a{spec.shape, {}};
    a.values.assign(a.element_count(), 0.0);
    const std::string& n = spec.name;
    if (spec.shape.size() == 4) {
      const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : a.values) v = normal(rng);
    } else if (n.ends_with(".weight") || n.ends_with(".running_var")) {
      std::fill(a.values.begin(), a.values.end(), 1.0);
    }
    out.emplace(n, std::move(a));
  }
  return out;
}

ArrayMap init_topdown(std::uint64_t seed, int classes, double stddev) {
  ArrayMap out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (const auto& spec : topdown_layout(classes)) {
    NamedArray a{spec.shape, {}};
    a.values.assign(a.element_count(), 0.0);
    if (spec.shape.size() == 4) {
      for (double& v : a.values) v = normal(rng);
    }
    out.emplace(spec.name, std::move(a));
  }
  return out;
}

std::size_t count_backbone_conv_params(const ArrayMap& backbone) {
  std::size_t n = 0;
  for (const auto& [name, a] : backbone) {
    if (is_conv_key(name, a)) n += a.values.size();
  }
  return n;
}

std::size_t count_params(const ArrayMap& arrays) {
  std::size_t n = 0;
  for (const auto& [_, a] : arrays) n += a.values.size();
  return n;
}

// ---------------------------------------------------------------------------

struct USSNetwork::Compiled {
  nn::Conv2d stem;
  std::vector<std::vector<Bottleneck>> stages;
  nn::Conv2d lateral[4];
  SmoothPair smooth[4];
  nn::Conv2d classifier;
};

struct UssTrace::Data {
  int in_height = 0;
  int in_width = 0;
  bool padded = false;
  int pad_height = 0;
  int pad_width = 0;

  Tensor stem_out;
  std::vector<std::size_t> pool_argmax;
  Tensor pool_out;
  struct BlockTrace {
    Tensor input;
    Tensor o1, o2, out;
  };
  std::vector<std::vector<BlockTrace>> blocks;
  Tensor features[4];  // C2..C5
  struct SmoothTrace {
    Tensor input, s1, s2;
  };
  SmoothTrace smooth[4];
  Tensor pyramid_cat;
  int logits_height = 0;
  int logits_width = 0;
  Tensor probs;
};

UssTrace::UssTrace() : data(std::make_unique<Data>()) {}
UssTrace::~UssTrace() = default;
UssTrace::UssTrace(UssTrace&&) noexcept = default;
UssTrace& UssTrace::operator=(UssTrace&&) noexcept = default;

USSNetwork::~USSNetwork() = default;
USSNetwork::USSNetwork(USSNetwork&&) noexcept = default;
USSNetwork& USSNetwork::operator=(USSNetwork&&) noexcept = default;

USSNetwork::USSNetwork(USSWeights weights) : weights_(std::move(weights)), net_(std::make_unique<Compiled>()) {
  validate_backbone(weights_.backbone);
  check_layout(weights_.topdown, topdown_layout(weights_.classes), "top-down pathway");
  const ArrayMap& b = weights_.backbone;
  net_->stem = fold_conv_bn(b, "conv1", "bn1", 2, 3);
  net_->stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < kStages[s].blocks; ++i) {
      const std::string p = block_name(s, i);
      const int stride = i == 0 ? kStages[s].stride : 1;
      Bottleneck blk;
      blk.conv1 = fold_conv_bn(b, p + ".conv1", p + ".bn1", 1, 0);
      blk.conv2 = fold_conv_bn(b, p + ".conv2", p + ".bn2", stride, 1);
      blk.conv3 = fold_conv_bn(b, p + ".conv3", p + ".bn3", 1, 0);
      if (i == 0) {
        blk.has_downsample = true;
        blk.downsample = fold_conv_bn(b, p + ".downsample.0", p + ".downsample.1", stride, 0);
      }
      net_->stages[s].push_back(std::move(blk));
    }
  }
  const ArrayMap& t = weights_.topdown;
  for (int l = 0; l < 4; ++l) {
    const std::string lat = "lateral" + std::to_string(l + 2);
    net_->lateral[l] = make_conv(t.at(lat + ".weight"), &t.at(lat + ".bias"), 1, 0);
    const std::string sm = "smooth" + std::to_string(l + 2);
    net_->smooth[l].first = make_conv(t.at(sm + ".0.weight"), &t.at(sm + ".0.bias"), 1, 1);
    net_->smooth[l].second = make_conv(t.at(sm + ".1.weight"), &t.at(sm + ".1.bias"), 1, 1);
  }
  net_->classifier = make_conv(t.at("classifier.weight"), &t.at("classifier.bias"), 1, 0);
}

std::uint64_t USSNetwork::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_map = [&](const ArrayMap& arrays) {
    for (const auto& [name, a] : arrays) {
      fnv_mix(h, name.data(), name.size());
      fnv_mix(h, a.values.data(), a.values.size() * sizeof(double));
    }
  };
  mix_map(weights_.backbone);
  mix_map(weights_.topdown);
  return h;
}

Tensor USSNetwork::forward(const Tensor& img, UssTrace* trace) const {
  if (img.channels() != 3) throw ArgumentError("segmentation input must have 3 channels");
  if (img.height() % kStride != 0 || img.width() % kStride != 0 || img.height() == 0 || img.width() == 0) {
    throw ArgumentError("segmentation input " + img.shape_string() +
                        " must have height and width divisible by 32; use forward_padded");
  }
  UssTrace local;
  UssTrace::Data& d = trace ? *trace->data : *local.data;
  d.in_height = img.height();
  d.in_width = img.width();

  Tensor x = img;
  for (int c = 0; c < 3; ++c) {
    for (double& v : x.channel(c)) v = (v - kMean[c]) / kStd[c];
  }
  d.stem_out = nn::conv2d(net_->stem, x);
  nn::relu_inplace(d.stem_out);
  d.pool_out = nn::max_pool(d.stem_out, 3, 2, 1, &d.pool_argmax);

  d.blocks.assign(4, {});
  const Tensor* current = &d.pool_out;
  for (int s = 0; s < 4; ++s) {
    for (const auto& blk : net_->stages[s]) {
      UssTrace::Data::BlockTrace bt;
      bt.input = *current;
      bt.o1 = nn::conv2d(blk.conv1, bt.input);
      nn::relu_inplace(bt.o1);
      bt.o2 = nn::conv2d(blk.conv2, bt.o1);
      nn::relu_inplace(bt.o2);
      bt.out = nn::conv2d(blk.conv3, bt.o2);
      if (blk.has_downsample) {
        bt.out += nn::conv2d(blk.downsample, bt.input);
      } else {
        bt.out += bt.input;
      }
      nn::relu_inplace(bt.out);
      d.blocks[s].push_back(std::move(bt));
      current = &d.blocks[s].back().out;
    }
    d.features[s] = *current;
  }

  // Top-down: P5 from its lateral alone, then each finer level from the
  // upsampled coarser level concatenated with its lateral.
  Tensor levels[4];
  for (int l = 3; l >= 0; --l) {
    Tensor lateral = nn::conv2d(net_->lateral[l], d.features[l]);
    auto& st = d.smooth[l];
    if (l == 3) {
      st.input = std::move(lateral);
    } else {
      st.input = concat_channels(resize_bilinear(levels[l + 1], lateral.height(), lateral.width()), lateral);
    }
    st.s1 = nn::conv2d(net_->smooth[l].first, st.input);
    nn::relu_inplace(st.s1);
    st.s2 = nn::conv2d(net_->smooth[l].second, st.s1);
    nn::relu_inplace(st.s2);
    levels[l] = st.s2;
  }
  const int h2 = levels[0].height();
  const int w2 = levels[0].width();
  Tensor cat = levels[0];
  for (int l = 1; l < 4; ++l) cat = concat_channels(cat, resize_bilinear(levels[l], h2, w2));
  d.pyramid_cat = std::move(cat);
  Tensor logits = nn::conv2d(net_->classifier, d.pyramid_cat);
  d.logits_height = logits.height();
  d.logits_width = logits.width();
  d.probs = nn::softmax_channels(resize_bilinear(logits, img.height(), img.width()));
  return d.probs;
}

Tensor USSNetwork::forward_padded(const Tensor& img, UssTrace* trace) const {
  const int h = img.height();
  const int w = img.width();
  const int ph = (h + kStride - 1) / kStride * kStride;
  const int pw = (w + kStride - 1) / kStride * kStride;
  if (ph == h && pw == w) return forward(img, trace);
  Tensor probs = forward(nn::reflect_pad(img, ph, pw), trace);
  if (trace) {
    trace->data->padded = true;
    trace->data->pad_height = ph;
    trace->data->pad_width = pw;
    trace->data->in_height = h;
    trace->data->in_width = w;
  }
  return nn::crop(probs, h, w);
}

SegProbMap USSNetwork::forward(const ImageTensor& img) const {
  return SegProbMap::from_tensor(forward(img.tensor(), nullptr));
}

Tensor USSNetwork::backward_input(const UssTrace& trace, const Tensor& grad_probs) const {
  const UssTrace::Data& d = *trace.data;
  const int full_h = d.padded ? d.pad_height : d.in_height;
  const int full_w = d.padded ? d.pad_width : d.in_width;
  Tensor g = d.padded ? nn::crop_adjoint(grad_probs, full_h, full_w) : grad_probs;

  g = nn::softmax_channels_backward(d.probs, g);
  g = resize_bilinear_adjoint(g, d.logits_height, d.logits_width);
  g = nn::conv2d_backward_input(net_->classifier, g, d.logits_height, d.logits_width);

  // Split the pyramid concat into per-level gradients.
  Tensor level_grad[4];
  {
    Tensor rest = std::move(g);
    for (int l = 0; l < 4; ++l) {
      Tensor part, tail;
      if (l < 3) {
        split_channels(rest, kFeatures, part, tail);
      } else {
        part = std::move(rest);
      }
      const auto& s2 = d.smooth[l].s2;
      level_grad[l] = l == 0 ? std::move(part) : resize_bilinear_adjoint(part, s2.height(), s2.width());
      rest = std::move(tail);
    }
  }

  Tensor feature_grad[4];
  for (int l = 0; l < 4; ++l) {
    auto& st = d.smooth[l];
    Tensor gs = std::move(level_grad[l]);
    nn::relu_backward(st.s2, gs);
    gs = nn::conv2d_backward_input(net_->smooth[l].second, gs, st.s1.height(), st.s1.width());
    nn::relu_backward(st.s1, gs);
    gs = nn::conv2d_backward_input(net_->smooth[l].first, gs, st.input.height(), st.input.width());
    Tensor g_lateral;
    if (l == 3) {
      g_lateral = std::move(gs);
    } else {
      Tensor g_up;
      split_channels(gs, kFeatures, g_up, g_lateral);
      const auto& coarse = d.smooth[l + 1].s2;
      level_grad[l + 1] += resize_bilinear_adjoint(g_up, coarse.height(), coarse.width());
    }
    feature_grad[l] = nn::conv2d_backward_input(net_->lateral[l], g_lateral, d.features[l].height(),
                                                d.features[l].width());
  }
  // The loop above visits l = 0..3 in order, so every coarser level's
  // gradient is complete before it is consumed.

  Tensor gx;
  for (int s = 3; s >= 0; --s) {
    if (gx.empty()) {
      gx = std::move(feature_grad[s]);
    } else {
      gx += feature_grad[s];
    }
    for (int i = static_cast<int>(net_->stages[s].size()) - 1; i >= 0; --i) {
      const auto& blk = net_->stages[s][i];
      const auto& bt = d.blocks[s][i];
      nn::relu_backward(bt.out, gx);
      Tensor gm = nn::conv2d_backward_input(blk.conv3, gx, bt.o2.height(), bt.o2.width());
      nn::relu_backward(bt.o2, gm);
      gm = nn::conv2d_backward_input(blk.conv2, gm, bt.o1.height(), bt.o1.width());
      nn::relu_backward(bt.o1, gm);
      gm = nn::conv2d_backward_input(blk.conv1, gm, bt.input.height(), bt.input.width());
      if (blk.has_downsample) {
        gm += nn::conv2d_backward_input(blk.downsample, gx, bt.input.height(), bt.input.width());
      } else {
        gm += gx;
      }
      gx = std::move(gm);
    }
  }
  gx = nn::max_pool_backward(gx, d.pool_argmax, d.stem_out.channels(), d.stem_out.height(),
                             d.stem_out.width());
  nn::relu_backward(d.stem_out, gx);
  gx = nn::conv2d_backward_input(net_->stem, gx, full_h, full_w);
  for (int c = 0; c < 3; ++c) {
    for (double& v : gx.channel(c)) v /= kStd[c];
  }
  if (d.padded) gx = nn::reflect_pad_adjoint(gx, d.in_height, d.in_width);
  return gx;
}

SegProbMap uss_forward(const USSNetwork& net, const ImageTensor& img) { return net.forward(img); }

}  // namespace sgz
