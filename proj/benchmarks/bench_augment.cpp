#include <benchmark/benchmark.h>

#include "brainssl/augment.hpp"

using namespace brainssl;

namespace {

VolumeGrid noise_volume(const Shape3& s) {
  VolumeGrid v(s);
  Rng rng(1);
  for (auto& x : v.data()) x = static_cast<float>(rng.normal());
  return v;
}

Shape3 cube(benchmark::State& state) {
  const auto n = state.range(0);
  return {n, n, n};
}

}  // namespace

static void BM_Flip(benchmark::State& state) {
  const auto v = noise_volume(cube(state));
  for (auto _ : state) benchmark::DoNotOptimize(flip(v, 0));
  state.SetItemsProcessed(state.iterations() * v.size());
}
BENCHMARK(BM_Flip)->Arg(32)->Arg(64);

static void BM_Rotate(benchmark::State& state) {
  const auto v = noise_volume(cube(state));
  for (auto _ : state) benchmark::DoNotOptimize(rotate(v, {0.3, -0.2, 0.5}));
  state.SetItemsProcessed(state.iterations() * v.size());
}
BENCHMARK(BM_Rotate)->Arg(32)->Arg(64);

static void BM_CropResize(benchmark::State& state) {
  const auto s = cube(state);
  const auto v = noise_volume(s);
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(rand_spatial_crop_resize(v, {s[0] / 5, s[1] / 5, s[2] / 5}, s, rng));
  state.SetItemsProcessed(state.iterations() * v.size());
}
BENCHMARK(BM_CropResize)->Arg(32)->Arg(64);

static void BM_Pipeline(benchmark::State& state) {
  const auto s = cube(state);
  const auto v = noise_volume(s);
  const auto spec = build_pipeline(state.range(1) ? "simclr" : "supervised", s);
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_view_pair(v, spec, Rng(3).substream(i++)));
}
BENCHMARK(BM_Pipeline)->Args({32, 1})->Args({32, 0})->Args({64, 1});

static void BM_ViewPairCanonical(benchmark::State& state) {
  const auto v = noise_volume(kCanonicalShape);
  const auto spec = build_pipeline("simclr");
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_view_pair(v, spec, Rng(4).substream(i++)));
}
BENCHMARK(BM_ViewPairCanonical)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
