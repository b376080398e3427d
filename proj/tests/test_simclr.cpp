#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "brainssl/contrastive.hpp"
#include "brainssl/error.hpp"
#include "brainssl/simclr.hpp"
#include "brainssl/train.hpp"
#include "test_util.hpp"

using namespace brainssl;

namespace {

using Vecs = std::vector<std::vector<double>>;

double dot_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Eq.-by-hand oracle: rows 0..N-1 are views i, rows N..2N-1 views j.
double oracle_loss(const Vecs& z, double tau) {
  const std::size_t two_n = z.size(), n = two_n / 2;
  auto term = [&](std::size_t i, std::size_t j) {
    double denom = 0.0;
    for (std::size_t k = 0; k < two_n; ++k) {
      if (k != i) denom += std::exp(dot_cos(z[i], z[k]) / tau);
    }
    return -std::log(std::exp(dot_cos(z[i], z[j]) / tau) / denom);
  };
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) total += (term(p, p + n) + term(p + n, p)) / 2.0;
  return total / static_cast<double>(n);
}

Vecs random_vecs(std::size_t rows, std::size_t dim, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Vecs v(rows, std::vector<double>(dim));
  for (auto& r : v)
    for (auto& x : r) x = nd(gen);
  return v;
}

torch::Tensor to_tensor(const Vecs& v) {
  auto t = torch::empty({static_cast<std::int64_t>(v.size()), static_cast<std::int64_t>(v[0].size())},
                        torch::kFloat64);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v[i].size(); ++j) t[i][j] = v[i][j];
  return t;
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.widths = {4, 8, 8, 16};
  c.input_shape = {32, 32, 32};
  c.projection_hidden = 16;
  c.projection_dim = 8;
  return c;
}

}  // namespace

TEST(CosineSim, Analytic) {
  const std::vector<double> z{0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine_sim(std::span<const double>(z), std::span<const double>(z)), 1.0, 1e-12);
  const std::vector<double> e1{1, 0}, e2{0, 1}, d{1, 1};
  EXPECT_NEAR(cosine_sim(std::span<const double>(e1), std::span<const double>(e2)), 0.0, 1e-12);
  EXPECT_NEAR(cosine_sim(std::span<const double>(d), std::span<const double>(e1)), 1.0 / std::sqrt(2.0), 1e-12);
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(cosine_sim(std::span<const double>(zero), std::span<const double>(e1)), InvalidArgument);
}

TEST(NtXent, SinglePairIsZero) {
  std::mt19937_64 gen(1);
  for (double tau : {0.1, 0.5, 2.0}) {
    auto z = to_tensor(random_vecs(2, 5, gen));
    EXPECT_NEAR(nt_xent_loss(z, tau).item<double>(), 0.0, 1e-12);
  }
}

TEST(NtXent, IdenticalProjectionsGiveLogThree) {
  auto z = torch::ones({4, 3}, torch::kFloat64);
  for (double tau : {0.1, 0.5, 1.0}) EXPECT_NEAR(nt_xent_loss(z, tau).item<double>(), std::log(3.0), 1e-9);
}

TEST(NtXent, MatchesScalarOracle) {
  std::mt19937_64 gen(2024);
  auto v = random_vecs(6, 4, gen);
  for (auto& r : v) {
    double n = 0;
    for (double x : r) n += x * x;
    for (double& x : r) x /= std::sqrt(n);
  }
  EXPECT_NEAR(nt_xent_loss(to_tensor(v), 0.5).item<double>(), oracle_loss(v, 0.5), 1e-6);

  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + gen() % 8, dim = 2 + gen() % 15;
    const double tau = std::array<double, 3>{0.1, 0.5, 1.0}[gen() % 3];
    auto w = random_vecs(2 * n, dim, gen);
    EXPECT_NEAR(nt_xent_loss(to_tensor(w), tau).item<double>(), oracle_loss(w, tau), 1e-6);
    EXPECT_NEAR(nt_xent_loss(to_tensor(w).to(torch::kFloat32), tau).item<double>(), oracle_loss(w, tau), 1e-4);
  }
}

TEST(NtXent, RescalingOneVectorIsInvariant) {
  std::mt19937_64 gen(3);
  auto z = to_tensor(random_vecs(8, 6, gen));
  const double base = nt_xent_loss(z, 0.5).item<double>();
  auto scaled = z.clone();
  scaled[2] *= 7.5;
  EXPECT_NEAR(nt_xent_loss(scaled, 0.5).item<double>(), base, 1e-9);
}

TEST(NtXent, PairPermutationIsInvariant) {
  std::mt19937_64 gen(4);
  auto z = to_tensor(random_vecs(10, 4, gen));
  auto perm = torch::tensor({3, 0, 4, 1, 2}, torch::kLong);
  auto permuted = torch::cat({z.slice(0, 0, 5).index_select(0, perm), z.slice(0, 5).index_select(0, perm)});
  EXPECT_NEAR(nt_xent_loss(permuted, 0.5).item<double>(), nt_xent_loss(z, 0.5).item<double>(), 1e-12);
}

TEST(NtXent, PositiveSimilarityMonotone) {
  // Three orthogonal directions plus a positive partner rotating towards
  // its anchor; every other similarity stays zero.
  auto loss_at = [](double angle) {
    Vecs v{{1, 0, 0, 0}, {0, 0, 1, 0}, {std::cos(angle), std::sin(angle), 0, 0}, {0, 0, 0, 1}};
    return oracle_loss(v, 0.5);
  };
  double prev = INFINITY;
  for (double a = 1.5; a >= 0.0; a -= 0.25) {
    Vecs v{{1, 0, 0, 0}, {0, 0, 1, 0}, {std::cos(a), std::sin(a), 0, 0}, {0, 0, 0, 1}};
    const double l = nt_xent_loss(to_tensor(v), 0.5).item<double>();
    EXPECT_NEAR(l, loss_at(a), 1e-9);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(NtXent, ZeroNormAndEmpty) {
  auto z = torch::ones({4, 3}, torch::kFloat64);
  z[1].zero_();
  EXPECT_THROW(nt_xent_loss(z, 0.5), InvalidArgument);
  EXPECT_THROW(nt_xent_loss(torch::ones({0, 3}, torch::kFloat64), 0.5), InvalidArgument);
  EXPECT_THROW(nt_xent_loss(torch::ones({4, 3}, torch::kFloat64), 0.0), InvalidArgument);
}

TEST(NtXentGrad, MatchesFiniteDifferences) {
  torch::manual_seed(5);
  for (int i = 0; i < 10; ++i) {
    auto z = torch::randn({8, 5}, torch::kFloat64);
    EXPECT_LE(nt_xent_grad_check(z, 0.5), 1e-4);
  }
}

TEST(NtXentGrad, AutogradAgreesWithAnalytic) {
  torch::manual_seed(6);
  auto z = torch::randn({6, 4}, torch::kFloat64).requires_grad_(true);
  auto loss = nt_xent_loss(z, 0.3);
  loss.backward();
  auto ref = nt_xent_value_and_grad(z.detach(), 0.3);
  EXPECT_NEAR(loss.item<double>(), ref.loss, 1e-12);
  EXPECT_TRUE(torch::allclose(z.grad(), ref.grad, 1e-10, 1e-12));
}

TEST(NtXentGrad, HugeTemperatureFlattensGradients) {
  torch::manual_seed(7);
  auto z = torch::randn({6, 4}, torch::kFloat64);
  auto g = nt_xent_value_and_grad(z, 1e6);
  EXPECT_LE(g.grad.abs().max().item<double>(), 1e-6);
}

TEST(NtXentGrad, OutsideProjectionHasNoGradient) {
  torch::manual_seed(8);
  auto all = torch::randn({5, 3}, torch::kFloat64).requires_grad_(true);
  nt_xent_loss(all.slice(0, 0, 4), 0.5).backward();
  EXPECT_EQ(all.grad()[4].abs().sum().item<double>(), 0.0);
  EXPECT_GT(all.grad()[0].abs().sum().item<double>(), 0.0);
}

TEST(NtXentPartial, ShardsSumToWhole) {
  torch::manual_seed(9);
  for (std::int64_t n : {1, 5, 12}) {
    auto z = torch::randn({2 * n, 6}, torch::kFloat64);
    const double whole = nt_xent_loss(z, 0.5).item<double>();
    for (std::int64_t w = 1; w <= n; ++w) {
      double total = 0.0;
      for (std::int64_t k = 0; k < w; ++k) total += nt_xent_partial(z, 0.5, shard_anchor_mask(n, w, k)).item<double>();
      EXPECT_NEAR(total, whole, 1e-9);
    }
  }
}

TEST(Encoder, CanonicalInputGives512Embedding) {
  EncoderConfig c;
  c.widths = {2, 2, 2, 512};
  c.projection_hidden = 8;
  auto model = init_encoder(c, 0);
  model->eval();
  torch::NoGradGuard g;
  auto h = model->encode(torch::randn({1, 1, 150, 192, 192}));
  EXPECT_EQ(h.sizes(), (std::vector<std::int64_t>{1, 512}));
  EXPECT_EQ(model->project(h).size(1), 64);
}

TEST(Encoder, TooSmallInputRejected) {
  EncoderConfig c = tiny_encoder();
  c.input_shape = {16, 32, 32};
  EXPECT_THROW(init_encoder(c, 0), InvalidArgument);
}

TEST(Encoder, SeededInitIsReproducible) {
  auto a = init_encoder(tiny_encoder(), 11), b = init_encoder(tiny_encoder(), 11), c = init_encoder(tiny_encoder(), 12);
  auto pa = a->parameters(), pb = b->parameters(), pc = c->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(torch::equal(pa[i], pb[i]));
    differs |= !torch::equal(pa[i], pc[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Encoder, ShapesRepeatabilityAndBatchPermutation) {
  auto model = init_encoder(tiny_encoder(), 3);
  std::vector<VolumeGrid> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(testutil::random_volume({32, 32, 32}, 20 + i));
  auto h1 = encode(model, batch), h2 = encode(model, batch);
  EXPECT_EQ(h1.sizes(), (std::vector<std::int64_t>{3, 16}));
  EXPECT_TRUE(torch::equal(h1, h2));
  std::vector<VolumeGrid> rev{batch[2], batch[1], batch[0]};
  auto h3 = encode(model, rev);
  EXPECT_TRUE(torch::allclose(h3, h1.flip(0), 1e-5, 1e-6));
  EXPECT_EQ(project(model, h1).sizes(), (std::vector<std::int64_t>{3, 8}));
  EXPECT_THROW(project(model, torch::ones({3, 15})), InvalidArgument);
  std::vector<VolumeGrid> mixed{batch[0], testutil::random_volume({32, 32, 33}, 1)};
  EXPECT_THROW(encode(model, mixed), InvalidArgument);
}

TEST(Encoder, ZeroParametersGiveZeroEmbedding) {
  auto model = init_encoder(tiny_encoder(), 4);
  {
    torch::NoGradGuard g;
    for (auto& p : model->parameters()) p.zero_();
  }
  std::vector<VolumeGrid> batch{testutil::random_volume({32, 32, 32}, 5)};
  EXPECT_EQ(encode(model, batch).abs().max().item<float>(), 0.0f);
}

TEST(Encoder, NonFiniteActivationIsNumericError) {
  auto model = init_encoder(tiny_encoder(), 4);
  {
    torch::NoGradGuard g;
    model->parameters().front().fill_(NAN);
  }
  std::vector<VolumeGrid> batch{testutil::random_volume({32, 32, 32}, 5)};
  EXPECT_THROW(encode(model, batch), NumericError);
}

TEST(Projection, PositivelyHomogeneous) {
  auto model = init_encoder(tiny_encoder(), 5);
  torch::NoGradGuard g;
  auto h = torch::randn({4, 16});
  EXPECT_TRUE(torch::allclose(project(model, 2 * h), 2 * project(model, h), 1e-5, 1e-6));
  EXPECT_TRUE(torch::equal(project(model, h), project(model, h)));
}

TEST(Sharding, LossMatchesSingleProcess) {
  auto cfg = tiny_encoder();
  auto model = init_encoder(cfg, 6);
  model->to(torch::kFloat64);
  model->train();
  torch::manual_seed(10);
  auto a = torch::randn({12, 1, 32, 32, 32}, torch::kFloat64);
  auto b = torch::randn({12, 1, 32, 32, 32}, torch::kFloat64);
  const double single = simclr_batch_loss(model, a, b, 1).item<double>();
  for (int w : {2, 3, 4, 12}) {
    EXPECT_NEAR(simclr_batch_loss(model, a, b, w).item<double>(), single, 1e-9) << w;
  }
}

TEST(Sharding, GradientsMatchSingleProcess) {
  auto run = [](int devices) {
    auto model = init_encoder(tiny_encoder(), 7);
    model->to(torch::kFloat64);
    model->train();
    torch::manual_seed(11);
    auto a = torch::randn({6, 1, 32, 32, 32}, torch::kFloat64);
    auto b = torch::randn({6, 1, 32, 32, 32}, torch::kFloat64);
    simclr_batch_loss(model, a, b, devices).backward();
    std::vector<torch::Tensor> g;
    for (auto& p : model->parameters()) g.push_back(p.grad().clone());
    return g;
  };
  auto g1 = run(1), g3 = run(3);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_TRUE(torch::allclose(g1[i], g3[i], 1e-8, 1e-10)) << i;
}
