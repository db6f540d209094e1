#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fd.hpp"
#include "fixtures.hpp"
#include "sgz/errors.hpp"
#include "sgz/log.hpp"
#include "sgz/rie.hpp"

using namespace sgz;
using sgz::testing::random_tensor;

namespace {

double curve(double v, double r, int steps, int order = 2) {
  const Tensor out = enhance(Tensor(1, 1, 1, v), Tensor(1, 1, 1, r), RIEConfig{order, steps});
  return out[0];
}

}  // namespace

TEST(Curve, HandValues) {
  EXPECT_NEAR(curve(0.5, -0.8, 1), 0.7, 1e-12);
  EXPECT_NEAR(curve(0.5, 1.0, 1), 0.25, 1e-12);
  EXPECT_NEAR(curve(0.25, -1.0, 1), 0.4375, 1e-12);
  EXPECT_NEAR(curve(0.25, -1.0, 2), 0.68359375, 1e-12);
}

TEST(Curve, IdentityAndFixedPoints) {
  const auto img = ImageTensor::from_tensor(random_tensor(3, 6, 7, 1));
  for (int t : {1, 3, 8}) {
    EXPECT_EQ(enhance(img, EnhancementFactor::filled(6, 7, 0.0), RIEConfig{2, t}), img);
  }
  for (double r : {-1.0, -0.3, 0.0, 0.6, 1.0}) {
    EXPECT_EQ(curve(0.0, r, 8), 0.0);
    EXPECT_EQ(curve(1.0, r, 8), 1.0);
  }
}

TEST(Curve, SingleStepEqualsCurveStep) {
  const Tensor x = random_tensor(3, 4, 5, 2);
  const Tensor r = random_tensor(3, 4, 5, 3, -1.0, 1.0);
  EXPECT_EQ(enhance(x, r, RIEConfig{2, 1}), curve_step(x, r, 2));
}

TEST(Curve, RangeMonotoneAndDirection) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uv(0.0, 1.0), ur(-1.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    double v1 = uv(rng), v2 = uv(rng);
    if (v1 > v2) std::swap(v1, v2);
    const double r = ur(rng);
    const double a = curve(v1, r, 8), b = curve(v2, r, 8);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(b, 1.0);
    ASSERT_LE(a, b);
    if (v1 > 0.0 && v1 < 1.0 && r != 0.0) {
      if (r < 0) {
        ASSERT_GT(curve(v1, r, 1), v1);
      } else {
        ASSERT_LT(curve(v1, r, 1), v1);
      }
    }
  }
}

TEST(Curve, ShapeMismatchAndBadConfig) {
  EXPECT_THROW(curve_step(Tensor(3, 2, 2), Tensor(3, 2, 3), 2), ArgumentError);
  EXPECT_THROW(RIEConfig({0, 8}).validate(), ArgumentError);
  EXPECT_THROW(RIEConfig({2, 0}).validate(), ArgumentError);
}

TEST(Curve, HigherOrderClampsWithWarning) {
  int warnings = 0;
  auto previous = log::set_sink([&](log::Level l, std::string_view) { warnings += l == log::Level::Warning; });
  const Tensor out = enhance(Tensor(1, 1, 1, 0.9), Tensor(1, 1, 1, -1.0), RIEConfig{4, 1});
  log::set_sink(previous);
  EXPECT_GE(out[0], 0.0);
  EXPECT_LE(out[0], 1.0);
  EXPECT_EQ(warnings, 1);
}

class RieGradient : public ::testing::TestWithParam<int> {};

TEST_P(RieGradient, MatchesFiniteDifferences) {
  const RIEConfig cfg{2, GetParam()};
  Tensor x = random_tensor(3, 5, 4, 7, 0.05, 0.95);
  Tensor r = random_tensor(3, 5, 4, 8, -0.9, 0.9);
  const Tensor probe = random_tensor(3, 5, 4, 9, -1.0, 1.0);
  auto objective = [&] {
    const Tensor y = enhance(x, r, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
    return s;
  };
  RieTrace trace;
  enhance(x, r, cfg, &trace);
  const RieGradients g = enhance_backward(r, trace, probe, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(sgz::testing::relative_error(g.input[i], sgz::testing::central_difference(objective, x[i], 1e-5), 1e-6), 1e-4);
    EXPECT_LE(sgz::testing::relative_error(g.factor[i], sgz::testing::central_difference(objective, r[i], 1e-5), 1e-6), 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(Steps, RieGradient, ::testing::Values(1, 2, 8));
