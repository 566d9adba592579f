#include <benchmark/benchmark.h>

#include <random>

#include "lpdesc/network.hpp"

using namespace lpdesc;

namespace {

Tensor4<float> random_batch(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor4<float> x(k, 1, kPatchSize, kPatchSize);
  for (auto& v : x.values()) v = u(rng);
  return x;
}

void BM_Forward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Network<float> net = build_network<float>(1);
  const auto x = random_batch(k, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, Mode::check));
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Network<float> net = build_network<float>(1);
  const auto x = random_batch(k, 3);
  Tensor4<float> dy(k, kDescriptorDim, 1, 1, 0.01f);
  for (auto _ : state) {
    ForwardTape<float> tape;
    net.zero_grad();
    net.forward(x, Mode::train, &tape);
    benchmark::DoNotOptimize(net.backward(tape, dy));
  }
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace
