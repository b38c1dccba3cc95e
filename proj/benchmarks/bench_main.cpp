// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "demoseg/backbone.hpp"
#include "demoseg/cssa.hpp"
#include "demoseg/diffops.hpp"
#include "demoseg/losses.hpp"
#include "demoseg/rng.hpp"

using namespace demoseg;

namespace {

Tensor<float> random_tensor(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto c = state.range(0), n = state.range(1);
  auto x = Var<float>::constant(random_tensor({c, n, n, n}, 1));
  auto w = Var<float>::constant(random_tensor({c, c, 3, 3, 3}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv3d(x, w, Var<float>(), 1).value().data());
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * double(c * c * 27 * n * n * n),
                                                benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3dForward)->Args({32, 16})->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = state.range(0), n = state.range(1);
  auto xt = random_tensor({c, n, n, n}, 1);
  auto wt = random_tensor({c, c, 3, 3, 3}, 2);
  for (auto _ : state) {
    auto x = Var<float>::leaf(xt);
    auto w = Var<float>::leaf(wt);
    auto y = ops::sum(ops::conv3d(x, w, Var<float>(), 1));
    backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({32, 16})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_CssaForward(benchmark::State& state) {
  ParameterStore<float> ps(3);
  init_cssa(ps, "cssa", 32, 0.01);
  auto x = Var<float>::constant(random_tensor({32, 16, 16, 16}, 4));
  for (auto _ : state) benchmark::DoNotOptimize(cssa_forward(x, ps, "cssa", 0.01, false).output.value().data());
}
BENCHMARK(BM_CssaForward)->Unit(benchmark::kMillisecond);

void BM_NetworkStep(benchmark::State& state) {
  const auto n = state.range(0);
  SegmentationNet<float> net(ModelConfig::desk(), 5);
  ModalityImages<float> images;
  for (std::size_t m = 0; m < kNumModalities; ++m) images[m] = random_tensor({1, n, n, n}, 10 + m);
  LabelVolume labels(Extent3{n, n, n}, 0);
  for (std::size_t i = 0; i < labels.size(); i += 7) labels.data[i] = static_cast<std::uint8_t>(i % 4);
  const auto pyramid = label_pyramid(labels, 3);
  const LossConfig lc;
  for (auto _ : state) {
    net.params().zero_grad();
    auto out = net.forward(images, ModalityIndicator::full());
    auto loss = total_loss(out, pyramid, lc);
    backward(loss.total);
    benchmark::DoNotOptimize(loss.breakdown.total);
  }
}
BENCHMARK(BM_NetworkStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_NetworkInference(benchmark::State& state) {
  const auto n = state.range(0);
  SegmentationNet<float> net(ModelConfig::desk(), 5);
  net.params().set_trainable(false);
  ModalityImages<float> images;
  for (std::size_t m = 0; m < kNumModalities; ++m) images[m] = random_tensor({1, n, n, n}, 10 + m);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(images, ModalityIndicator::full()).logits[0].value().data());
}
BENCHMARK(BM_NetworkInference)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
