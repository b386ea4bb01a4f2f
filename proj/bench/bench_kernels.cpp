// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "dyl/cpda.hpp"
#include "dyl/flow.hpp"
#include "dyl/metrics.hpp"
#include "dyl/reference.hpp"

using namespace dyl;

namespace {

Image blob(int n, double cx) {
  Image img(n, n, 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      img(y, x) = 0.1 + 0.8 * std::exp(-((x - cx) * (x - cx) + (y - n / 2.0) * (y - n / 2.0)) / 72.0);
  return img;
}

BinaryMask disc(int n, double cx, double cy, double r) {
  BinaryMask m(n, n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) m(y, x) = std::hypot(x - cx, y - cy) <= r;
  return m;
}

struct ConvInput {
  FeatureClip x;
  std::vector<double> kernel;
  Vector bias;
};

ConvInput conv_input() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConvInput in{FeatureClip(16, 32, 32, 16), std::vector<double>(16 * 16 * 27), Vector::Zero(16)};
  for (auto& v : in.x.data) v = u(rng);
  for (auto& v : in.kernel) v = u(rng) * 0.1;
  return in;
}

void BM_FlowParallel(benchmark::State& s) {
  const auto a = blob(128, 60), b = blob(128, 61);
  for (auto _ : s) benchmark::DoNotOptimize(compute_flow(a, b, {}));
}

void BM_FlowReference(benchmark::State& s) {
  const auto a = blob(128, 60), b = blob(128, 61);
  for (auto _ : s) benchmark::DoNotOptimize(reference::compute_flow(a, b, {}));
}

void BM_Conv3dParallel(benchmark::State& s) {
  const auto in = conv_input();
  for (auto _ : s) benchmark::DoNotOptimize(conv3d_same(in.x, in.kernel, in.bias));
}

void BM_Conv3dReference(benchmark::State& s) {
  const auto in = conv_input();
  for (auto _ : s) benchmark::DoNotOptimize(reference::conv3d_same(in.x, in.kernel, in.bias));
}

void BM_Hd95Parallel(benchmark::State& s) {
  const auto a = disc(256, 120, 128, 60), b = disc(256, 130, 124, 55);
  for (auto _ : s) benchmark::DoNotOptimize(hd95(a, b));
}

void BM_Hd95Reference(benchmark::State& s) {
  const auto a = disc(256, 120, 128, 60), b = disc(256, 130, 124, 55);
  for (auto _ : s) benchmark::DoNotOptimize(reference::hd95(a, b));
}

}  // namespace

BENCHMARK(BM_FlowParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FlowReference)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv3dParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv3dReference)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Hd95Parallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Hd95Reference)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
