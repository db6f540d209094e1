#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fd.hpp"
#include "fixtures.hpp"
#include "sgz/errors.hpp"
#include "sgz/losses.hpp"
#include "sgz/uss.hpp"

using namespace sgz;
using sgz::testing::random_tensor;

namespace {

const USSNetwork& shared_net() {
  static const USSNetwork net([] {
    USSWeights w;
    w.backbone = random_backbone(1);
    w.topdown = init_topdown(1, 21);
    return w;
  }());
  return net;
}

std::string bn_for(const std::string& conv) {
  if (conv == "conv1") return "bn1";
  const auto dot = conv.rfind('.');
  const std::string head = conv.substr(0, dot), leaf = conv.substr(dot + 1);
  if (leaf == "0") return head + ".1";
  return head + ".bn" + leaf.substr(4);
}

}  // namespace

TEST(UssLayout, ConvolutionTrunkCount) {
  const ArrayMap bb = random_backbone(0);
  EXPECT_EQ(count_backbone_conv_params(bb), 23454912u);
  EXPECT_EQ(count_params(bb), 23454912u + 2u * 53120u);
  std::size_t convs = 0;
  for (const auto& spec : resnet50_layout()) convs += spec.shape.size() == 4;
  EXPECT_EQ(convs, 53u);
  EXPECT_EQ(resnet50_layout().front().name, "conv1.weight");
}

TEST(UssLayout, TopdownShapes) {
  const auto layout = topdown_layout(21);
  auto find = [&](const std::string& n) {
    for (const auto& s : layout) {
      if (s.name == n) return s.shape;
    }
    return std::vector<std::int64_t>{};
  };
  EXPECT_EQ(find("lateral2.weight"), (std::vector<std::int64_t>{256, 256, 1, 1}));
  EXPECT_EQ(find("lateral5.weight"), (std::vector<std::int64_t>{256, 2048, 1, 1}));
  EXPECT_EQ(find("smooth2.0.weight"), (std::vector<std::int64_t>{256, 512, 3, 3}));
  EXPECT_EQ(find("smooth5.0.weight"), (std::vector<std::int64_t>{256, 256, 3, 3}));
  EXPECT_EQ(find("classifier.weight"), (std::vector<std::int64_t>{21, 1024, 1, 1}));
}

TEST(UssBackbone, SaveLoadRoundTrip) {
  const auto dir = sgz::testing::scratch_dir("uss_bb");
  const ArrayMap bb = random_backbone(2);
  save_backbone(bb, dir / "rn50.sgz", StoredType::F64);
  EXPECT_EQ(load_backbone(dir / "rn50.sgz"), bb);
  save_backbone(bb, dir / "rn50_f32.sgz");
  EXPECT_EQ(load_backbone(dir / "rn50_f32.sgz"), load_backbone(dir / "rn50_f32.sgz"));
}

TEST(UssBackbone, RejectsIncompleteOrMalformed) {
  ArrayMap bb = random_backbone(3);
  ArrayMap missing = bb;
  for (auto it = missing.begin(); it != missing.end();) {
    it = it->first.rfind("layer4", 0) == 0 ? missing.erase(it) : std::next(it);
  }
  try {
    validate_backbone(missing);
    FAIL() << "incomplete backbone accepted";
  } catch (const StructuralError& e) {
    EXPECT_NE(std::string(e.what()).find("layer4.0.conv1.weight"), std::string::npos) << e.what();
  }

  ArrayMap extra = bb;
  extra["fc.weight"] = {{2}, {0.0, 0.0}};
  EXPECT_THROW(validate_backbone(extra), StructuralError);

  ArrayMap wrong = bb;
  wrong["layer2.0.conv2.weight"] = {{1}, {0.0}};
  EXPECT_THROW(validate_backbone(wrong), StructuralError);

  const auto dir = sgz::testing::scratch_dir("uss_bb_bad");
  Archive a;
  a.kind = kBackboneArchiveKind;
  for (const auto& [k, v] : missing) a.add(k, v);
  write_archive(a, dir / "partial.sgz", StoredType::F32);
  EXPECT_THROW(load_backbone(dir / "partial.sgz"), StructuralError);
}

TEST(UssTopdown, InitStatistics) {
  EXPECT_EQ(init_topdown(5, 21), init_topdown(5, 21));
  const ArrayMap td = init_topdown(5, 21);
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& [name, arr] : td) {
    const bool bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    for (double v : arr.values) {
      if (bias) {
        EXPECT_EQ(v, 0.0) << name;
      } else {
        s += v, s2 += v * v, ++n;
      }
    }
  }
  ASSERT_GE(n, 100000u);
  const double m = s / n;
  const double sd = std::sqrt(s2 / n - m * m);
  EXPECT_GE(sd, 0.0095);
  EXPECT_LE(sd, 0.0105);
  EXPECT_THROW(init_topdown(5, 1), ArgumentError);
}

TEST(UssForward, SimplexShapeAndDeterminism) {
  const auto& net = shared_net();
  const auto img = ImageTensor::from_tensor(random_tensor(3, 256, 256, 4));
  const SegProbMap p = uss_forward(net, img);
  ASSERT_EQ(p.classes(), 21);
  ASSERT_EQ(p.tensor().height(), 256);
  ASSERT_EQ(p.tensor().width(), 256);
  const Tensor conf = p.confidence();
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) {
      double s = 0.0;
      for (int k = 0; k < 21; ++k) {
        const double v = p.tensor().at(k, y, x);
        ASSERT_GE(v, 0.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-5);
      ASSERT_GE(conf.at(0, y, x), 1.0 / 21.0);
    }
  }
  EXPECT_EQ(uss_forward(net, img).tensor(), p.tensor());
}

TEST(UssForward, SizeRules) {
  const auto& net = shared_net();
  EXPECT_THROW(net.forward(random_tensor(3, 50, 64, 5), nullptr), ArgumentError);
  const Tensor p = net.forward_padded(random_tensor(3, 50, 70, 5), nullptr);
  EXPECT_EQ(p.channels(), 21);
  EXPECT_EQ(p.height(), 50);
  EXPECT_EQ(p.width(), 70);
  EXPECT_NO_THROW(SegProbMap::from_tensor(p));
}

TEST(UssForward, SegProbMapValidation) {
  EXPECT_THROW(SegProbMap::from_tensor(Tensor(3, 2, 2, 0.5)), ArgumentError);
  Tensor t(2, 1, 1);
  t[0] = 1.2, t[1] = -0.2;
  EXPECT_THROW(SegProbMap::from_tensor(t), ArgumentError);
  EXPECT_NO_THROW(SegProbMap::from_tensor(Tensor(4, 2, 2, 0.25)));
}

TEST(UssForward, BatchNormFoldingMatchesExplicitAffine) {
  ArrayMap bb = random_backbone(6);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.5, 1.5), c(-0.1, 0.1);
  for (auto& [name, arr] : bb) {
    if (name.find("running_var") != std::string::npos || name.find(".weight") != std::string::npos) {
      if (arr.shape.size() == 1) {
        for (double& v : arr.values) v = u(rng);
      }
    } else if (name.find("running_mean") != std::string::npos || name.find(".bias") != std::string::npos) {
      for (double& v : arr.values) v = c(rng);
    }
  }
  // Same network with every affine normalization pushed into its kernel by hand.
  ArrayMap folded = bb;
  const double eps = 1e-5;
  for (const auto& spec : resnet50_layout()) {
    if (spec.shape.size() != 4) continue;
    const std::string conv = spec.name.substr(0, spec.name.size() - 7);
    const std::string bn = bn_for(conv);
    const auto& g = bb.at(bn + ".weight").values;
    const auto& b = bb.at(bn + ".bias").values;
    const auto& m = bb.at(bn + ".running_mean").values;
    const auto& v = bb.at(bn + ".running_var").values;
    auto& k = folded.at(spec.name).values;
    const std::size_t per_out = k.size() / g.size();
    for (std::size_t o = 0; o < g.size(); ++o) {
      const double scale = g[o] / std::sqrt(v[o] + eps);
      for (std::size_t i = 0; i < per_out; ++i) k[o * per_out + i] *= scale;
      folded.at(bn + ".weight").values[o] = 1.0;
      folded.at(bn + ".bias").values[o] = b[o] - m[o] * scale;
      folded.at(bn + ".running_mean").values[o] = 0.0;
      folded.at(bn + ".running_var").values[o] = 1.0 - eps;
    }
  }
  const ArrayMap td = init_topdown(6, 5, 0.05);
  const USSNetwork a(USSWeights{5, bb, td});
  const USSNetwork b(USSWeights{5, folded, td});
  const Tensor img = random_tensor(3, 64, 64, 7);
  const Tensor pa = a.forward(img, nullptr), pb = b.forward(img, nullptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
  EXPECT_LE(worst, 1e-9);
}

TEST(UssFrozen, ChecksumIsStable) {
  const auto& net = shared_net();
  const auto before = net.checksum();
  UssTrace trace;
  const Tensor p = net.forward(random_tensor(3, 64, 64, 8), &trace);
  Tensor g;
  sem_loss(p, LossConfig{}, &g);
  net.backward_input(trace, g);
  EXPECT_EQ(net.checksum(), before);
  const USSNetwork other(USSWeights{21, random_backbone(2), init_topdown(1, 21)});
  EXPECT_NE(other.checksum(), before);
}

TEST(UssGradient, InputSpotCheck) {
  const auto& net = shared_net();
  const LossConfig cfg;
  Tensor img = random_tensor(3, 64, 64, 9);
  auto objective = [&] { return sem_loss(net.forward(img, nullptr), cfg); };
  UssTrace trace;
  const Tensor p = net.forward(img, &trace);
  Tensor gp;
  sem_loss(p, cfg, &gp);
  const Tensor gi = net.backward_input(trace, gp);
  ASSERT_TRUE(all_finite(gi));
  EXPECT_GT(max_abs(gi), 0.0);

  std::mt19937_64 rng(10);
  int good = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = rng() % img.size();
    const double numeric = sgz::testing::central_difference(objective, img[i], 1e-5);
    const double err = sgz::testing::relative_error(gi[i], numeric, 1e-9);
    good += err <= 1e-2;
    EXPECT_LE(err, 1e-2) << "element " << i << " analytic " << gi[i] << " numeric " << numeric;
  }
  EXPECT_EQ(good, 20);
}

TEST(UssGradient, PaddedPathSpotCheck) {
  const auto& net = shared_net();
  const LossConfig cfg;
  Tensor img = random_tensor(3, 40, 36, 11);
  auto objective = [&] { return sem_loss(net.forward_padded(img, nullptr), cfg); };
  UssTrace trace;
  const Tensor p = net.forward_padded(img, &trace);
  Tensor gp;
  sem_loss(p, cfg, &gp);
  const Tensor gi = net.backward_input(trace, gp);
  ASSERT_TRUE(gi.same_shape(img));
  std::mt19937_64 rng(12);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = rng() % img.size();
    const double numeric = sgz::testing::central_difference(objective, img[i], 1e-5);
    EXPECT_LE(sgz::testing::relative_error(gi[i], numeric, 1e-9), 1e-2) << "element " << i;
  }
}
