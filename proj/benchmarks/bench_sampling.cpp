#include <benchmark/benchmark.h>

#include <random>

#include "lpdesc/datagen.hpp"
#include "lpdesc/geometry.hpp"

using namespace lpdesc;

namespace {

void BM_Grid(benchmark::State& state) {
  const GridSpec spec{32, 96.0, state.range(0) == 0 ? GridKind::logpolar : GridKind::cartesian};
  const Keypoint kp = make_keypoint(200.5, 180.25, 1.8, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(make_grid(kp, spec));
}
BENCHMARK(BM_Grid)->Arg(0)->Arg(1)->ArgNames({"cartesian"});

// Grid construction plus bilinear lookups for a page of keypoints.
void BM_ExtractPatches(benchmark::State& state) {
  std::mt19937_64 rng(1);
  TextureOptions to;
  to.height = to.width = 512;
  to.blobs = 2400;
  const Image img = gaussian_texture(to, rng);
  std::uniform_real_distribution<double> pos(100.0, 412.0), ang(0.0, kTwoPi);
  std::vector<Keypoint> kps;
  for (int i = 0; i < 256; ++i) kps.push_back(make_keypoint(pos(rng), pos(rng), 1.8, ang(rng)));
  const GridSpec spec{32, 96.0, GridKind::logpolar};
  for (auto _ : state) benchmark::DoNotOptimize(extract_patches(img, kps, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(kps.size()));
}
BENCHMARK(BM_ExtractPatches)->Unit(benchmark::kMillisecond);

}  // namespace
