#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "brainssl/contrastive.hpp"
#include "brainssl/mae.hpp"

using namespace brainssl;

static void BM_NtXent(benchmark::State& state) {
  torch::manual_seed(0);
  const auto z = torch::randn({2 * state.range(0), 64});
  for (auto _ : state) benchmark::DoNotOptimize(nt_xent_loss(z, 0.5).item<float>());
}
BENCHMARK(BM_NtXent)->Arg(8)->Arg(36)->Arg(72)->Arg(256);

static void BM_NtXentBackward(benchmark::State& state) {
  torch::manual_seed(0);
  const auto z0 = torch::randn({2 * state.range(0), 64});
  for (auto _ : state) {
    auto z = z0.clone().requires_grad_(true);
    nt_xent_loss(z, 0.5).backward();
    benchmark::DoNotOptimize(z.grad().data_ptr());
  }
}
BENCHMARK(BM_NtXentBackward)->Arg(36)->Arg(72);

static void BM_NtXentSharded(benchmark::State& state) {
  torch::manual_seed(0);
  const std::int64_t n = 72, workers = state.range(0);
  const auto z = torch::randn({2 * n, 64});
  for (auto _ : state) {
    double total = 0;
    for (std::int64_t w = 0; w < workers; ++w)
      total += nt_xent_partial(z, 0.5, shard_anchor_mask(n, workers, w)).item<double>();
    benchmark::DoNotOptimize(total);
  }
}
BENCHMARK(BM_NtXentSharded)->Arg(1)->Arg(12);

// Encoder cost with and without masking; the masked run sees a quarter of the tokens.
static void BM_MaeForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  ViTConfig cfg;
  cfg.input_shape = {32, 32, 32};
  cfg.patch = {8, 8, 8};
  cfg.embed_dim = 96;
  cfg.depth = 4;
  cfg.heads = 3;
  cfg.decoder_embed_dim = 48;
  cfg.decoder_depth = 2;
  cfg.decoder_heads = 3;
  auto model = init_mae(cfg, 0);
  model->eval();
  const auto layout = cfg.layout();
  const double ratio = static_cast<double>(state.range(0)) / 100.0;
  Rng rng(1);
  std::vector<MaskSet> masks;
  for (int i = 0; i < 8; ++i) masks.push_back(sample_mask(layout.num_patches(), ratio, rng));
  const auto patches = torch::randn({8, layout.num_patches(), layout.patch_numel()});
  const auto visible = visible_index(masks);
  for (auto _ : state) {
    const auto latent = model->forward_encoder(patches, visible);
    benchmark::DoNotOptimize(model->forward_decoder(latent, visible).data_ptr());
  }
  state.counters["encoder_tokens"] = static_cast<double>(model->last_encoder_tokens());
}
BENCHMARK(BM_MaeForward)->Arg(0)->Arg(75)->Unit(benchmark::kMillisecond);

static void BM_MaeLoss(benchmark::State& state) {
  torch::manual_seed(0);
  const auto pred = torch::randn({2, 864, 6400});
  const auto target = torch::randn({2, 864, 6400});
  const auto mask = torch::rand({2, 864}) < 0.75;
  for (auto _ : state) benchmark::DoNotOptimize(mae_loss(pred, target, mask).item<float>());
}
BENCHMARK(BM_MaeLoss)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
