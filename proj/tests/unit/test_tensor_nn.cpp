#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "sgz/errors.hpp"
#include "sgz/nn.hpp"

using namespace sgz;
using sgz::testing::random_tensor;

namespace {

// Direct-summation oracle for a zero-padded convolution.
Tensor naive_conv(const nn::Conv2d& c, const Tensor& in) {
  const int oh = (in.height() + 2 * c.padding - c.kernel) / c.stride + 1;
  const int ow = (in.width() + 2 * c.padding - c.kernel) / c.stride + 1;
  Tensor out(c.out_channels, oh, ow);
  for (int o = 0; o < c.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = c.bias.empty() ? 0.0 : c.bias[o];
        for (int i = 0; i < c.in_channels; ++i) {
          for (int ky = 0; ky < c.kernel; ++ky) {
            for (int kx = 0; kx < c.kernel; ++kx) {
              const int iy = y * c.stride - c.padding + ky;
              const int ix = x * c.stride - c.padding + kx;
              if (iy < 0 || ix < 0 || iy >= in.height() || ix >= in.width()) continue;
              s += c.weight[((o * c.in_channels + i) * c.kernel + ky) * c.kernel + kx] * in.at(i, iy, ix);
            }
          }
        }
        out.at(o, y, x) = s;
      }
    }
  }
  return out;
}

nn::Conv2d random_conv(int in, int out, int k, int stride, int pad, std::uint64_t seed) {
  nn::Conv2d c{in, out, k, stride, pad, {}, {}};
  const Tensor w = random_tensor(1, 1, in * out * k * k, seed, -1.0, 1.0);
  const Tensor b = random_tensor(1, 1, out, seed + 1, -1.0, 1.0);
  c.weight.assign(w.values().begin(), w.values().end());
  c.bias.assign(b.values().begin(), b.values().end());
  return c;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Tensor, ConcatSplitRoundTrip) {
  const Tensor a = random_tensor(2, 3, 4, 1);
  const Tensor b = random_tensor(3, 3, 4, 2);
  const Tensor c = concat_channels(a, b);
  EXPECT_EQ(c.channels(), 5);
  Tensor a2, b2;
  split_channels(c, 2, a2, b2);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
  EXPECT_THROW(concat_channels(a, Tensor(1, 2, 4)), ArgumentError);
}

TEST(Tensor, Reductions) {
  Tensor t(1, 2, 2);
  t[0] = 1.0, t[1] = -3.0, t[2] = 2.0, t[3] = 4.0;
  EXPECT_EQ(sum(t), 4.0);
  EXPECT_EQ(mean(t), 1.0);
  EXPECT_EQ(max_abs(t), 4.0);
  EXPECT_TRUE(all_finite(t));
  t[2] = INFINITY;
  EXPECT_FALSE(all_finite(t));
}

struct ConvCase {
  int in, out, k, stride, pad, h, w;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesNaiveOracle) {
  const auto p = GetParam();
  const auto conv = random_conv(p.in, p.out, p.k, p.stride, p.pad, 11);
  const Tensor x = random_tensor(p.in, p.h, p.w, 12, -1.0, 1.0);
  const Tensor fast = nn::conv2d(conv, x);
  const Tensor slow = naive_conv(conv, x);
  ASSERT_TRUE(fast.same_shape(slow)) << fast.shape_string() << " vs " << slow.shape_string();
  for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], slow[i], 1e-10);
}

TEST_P(ConvTest, BackwardIsAdjoint) {
  const auto p = GetParam();
  auto conv = random_conv(p.in, p.out, p.k, p.stride, p.pad, 21);
  std::fill(conv.bias.begin(), conv.bias.end(), 0.0);
  const Tensor x = random_tensor(p.in, p.h, p.w, 22, -1.0, 1.0);
  const Tensor y = nn::conv2d(conv, x);
  const Tensor g = random_tensor(y.channels(), y.height(), y.width(), 23, -1.0, 1.0);
  const Tensor gx = nn::conv2d_backward_input(conv, g, p.h, p.w);
  EXPECT_NEAR(dot(y, g), dot(x, gx), 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 7, 9}, ConvCase{2, 5, 1, 1, 0, 6, 6},
                                           ConvCase{4, 3, 3, 2, 1, 9, 8}, ConvCase{3, 2, 7, 2, 3, 16, 13},
                                           ConvCase{2, 3, 1, 2, 0, 8, 7}));

TEST(MaxPool, ValuesAndBackward) {
  const Tensor x = random_tensor(2, 8, 9, 5);
  std::vector<std::size_t> argmax;
  const Tensor y = nn::max_pool(x, 3, 2, 1, &argmax);
  EXPECT_EQ(y.height(), 4);
  EXPECT_EQ(y.width(), 5);
  for (int c = 0; c < 2; ++c) {
    for (int oy = 0; oy < y.height(); ++oy) {
      for (int ox = 0; ox < y.width(); ++ox) {
        double m = -INFINITY;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy >= 0 && ix >= 0 && iy < 8 && ix < 9) m = std::max(m, x.at(c, iy, ix));
          }
        }
        EXPECT_EQ(y.at(c, oy, ox), m);
      }
    }
  }
  const Tensor g = random_tensor(2, 4, 5, 6);
  const Tensor gx = nn::max_pool_backward(g, argmax, 2, 8, 9);
  EXPECT_NEAR(sum(gx), sum(g), 1e-12);
}

TEST(Softmax, SimplexAndGradient) {
  const Tensor logits = random_tensor(5, 3, 4, 7, -3.0, 3.0);
  const Tensor p = nn::softmax_channels(logits);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      double s = 0.0;
      for (int c = 0; c < 5; ++c) s += p.at(c, y, x);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  // d/dlogits of sum(w * softmax) by central differences.
  const Tensor w = random_tensor(5, 3, 4, 8);
  const Tensor g = nn::softmax_channels_backward(p, w);
  Tensor l = logits;
  for (std::size_t i = 0; i < l.size(); i += 7) {
    const double saved = l[i];
    l[i] = saved + 1e-6;
    const double up = dot(nn::softmax_channels(l), w);
    l[i] = saved - 1e-6;
    const double down = dot(nn::softmax_channels(l), w);
    l[i] = saved;
    EXPECT_NEAR(g[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Padding, ReflectAndCropAdjoints) {
  const Tensor x = random_tensor(2, 5, 6, 9);
  const Tensor p = nn::reflect_pad(x, 9, 13);
  EXPECT_EQ(p.at(0, 5, 0), x.at(0, 3, 0));
  EXPECT_EQ(p.at(1, 0, 6), x.at(1, 0, 4));
  const Tensor g = random_tensor(2, 9, 13, 10);
  EXPECT_NEAR(dot(p, g), dot(x, nn::reflect_pad_adjoint(g, 5, 6)), 1e-12);

  const Tensor c = nn::crop(p, 5, 6);
  EXPECT_EQ(c, x);
  const Tensor gc = random_tensor(2, 5, 6, 11);
  EXPECT_NEAR(dot(c, gc), dot(p, nn::crop_adjoint(gc, 9, 13)), 1e-12);
}
