#include <benchmark/benchmark.h>

#include <random>

#include "lpdesc/triplet.hpp"

using namespace lpdesc;

namespace {

DescriptorMatrix<float> unit_rows(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  DescriptorMatrix<float> m(k, 128);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < 128; ++j) m(i, j) = n(rng);
    m.row(i).normalize();
  }
  return m;
}

void BM_TripletLoss(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto a = unit_rows(k, 1);
  const auto b = unit_rows(k, 2);
  for (auto _ : state) benchmark::DoNotOptimize(triplet_loss(a, b, TripletLossConfig{}));
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_TripletLoss)->Arg(128)->Arg(1000);

void BM_Mining(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto d = distance_matrix(unit_rows(k, 3), unit_rows(k, 4));
  for (auto _ : state) benchmark::DoNotOptimize(mine_hardest_in_batch(d));
}
BENCHMARK(BM_Mining)->Arg(128)->Arg(1000);

}  // namespace
