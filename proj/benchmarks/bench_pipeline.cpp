#include <random>

#include <benchmark/benchmark.h>

#include "sgz/efe.hpp"
#include "sgz/losses.hpp"
#include "sgz/metrics.hpp"
#include "sgz/rie.hpp"

namespace {

sgz::Tensor random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  sgz::Tensor t(3, h, w);
  for (double& v : t.values()) v = u(rng);
  return t;
}

void BM_EfeForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto w = sgz::init_efe(sgz::EFEConfig{}, 1);
  const auto img = random_image(side, side, 2);
  for (auto _ : state) benchmark::DoNotOptimize(sgz::efe_forward(w, img, nullptr));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_EfeForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_EfeTrainingStep(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto w = sgz::init_efe(sgz::EFEConfig{}, 1);
  const auto img = random_image(side, side, 3);
  const sgz::Tensor probe = random_image(side, side, 4);
  for (auto _ : state) {
    sgz::EfeTrace trace;
    sgz::efe_forward(w, img, &trace);
    benchmark::DoNotOptimize(sgz::efe_backward(w, trace, probe));
  }
}
BENCHMARK(BM_EfeTrainingStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Enhance(benchmark::State& state) {
  const auto img = random_image(512, 512, 5);
  sgz::Tensor factor = random_image(512, 512, 6);
  for (double& v : factor.values()) v = 2.0 * v - 1.0;
  const sgz::RIEConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(sgz::enhance(img, factor, cfg));
}
BENCHMARK(BM_Enhance)->Unit(benchmark::kMillisecond);

void BM_TotalLoss(benchmark::State& state) {
  const auto in = random_image(256, 256, 7);
  const auto y = random_image(256, 256, 8);
  const sgz::LossConfig cfg;
  for (auto _ : state) {
    sgz::LossGradients g;
    benchmark::DoNotOptimize(sgz::total_loss({y, in, nullptr, nullptr}, cfg, &g));
  }
}
BENCHMARK(BM_TotalLoss)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto a = random_image(512, 512, 9);
  const auto b = random_image(512, 512, 10);
  for (auto _ : state) benchmark::DoNotOptimize(sgz::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
