#include "brainssl/simclr.hpp"

#include <mutex>

#include "brainssl/error.hpp"

namespace brainssl {

namespace nn = torch::nn;

void EncoderConfig::validate() const {
  if (architecture != "resnet18_3d") {
    throw InvalidArgument("unsupported encoder architecture '" + architecture + "'");
  }
  for (auto w : widths) {
    if (w < 1) throw InvalidArgument("encoder widths must be positive");
  }
  if (projection_dim < 1 || projection_hidden < 1) {
    throw InvalidArgument("projection sizes must be positive");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
  for (auto e : input_shape) {
    if (e < 32) {
      throw InvalidArgument("input shape " + to_string(input_shape) +
                            " is too small for five stride-2 reductions (need >= 32 per axis)");
    }
  }
}

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

// ---------------------------------------------------------------------------

SyncBatchNorm3dImpl::SyncBatchNorm3dImpl(std::int64_t channels, double momentum, double eps)
    : momentum_(momentum), eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
  running_mean = register_buffer("running_mean", torch::zeros({channels}));
  running_var = register_buffer("running_var", torch::ones({channels}));
  num_batches_tracked = register_buffer("num_batches_tracked", torch::zeros({}, torch::kLong));
}

Shards SyncBatchNorm3dImpl::forward(const Shards& xs) {
  Shards out;
  out.reserve(xs.size());
  if (!is_training() || xs.size() == 1) {
    if (is_training()) {
      torch::NoGradGuard g;
      num_batches_tracked += 1;
    }
    for (const auto& x : xs) {
      out.push_back(torch::batch_norm(x, weight, bias, running_mean, running_var, is_training(),
                                      momentum_, eps_, /*cudnn_enabled=*/false));
    }
    return out;
  }

  // Lock-step reduction across workers: global sums, then local normalisation.
  const std::vector<std::int64_t> dims{0, 2, 3, 4};
  torch::Tensor total;
  std::int64_t count = 0;
  for (const auto& x : xs) {
    auto s = x.sum(dims);
    total = total.defined() ? total + s : s;
    count += x.numel() / x.size(1);
  }
  const auto mean = total / static_cast<double>(count);
  const auto mean5 = mean.view({1, -1, 1, 1, 1});
  torch::Tensor sq;
  for (const auto& x : xs) {
    auto s = (x - mean5).pow(2).sum(dims);
    sq = sq.defined() ? sq + s : s;
  }
  const auto var = sq / static_cast<double>(count);
  const auto inv_std = torch::rsqrt(var + eps_).view({1, -1, 1, 1, 1});
  const auto w = weight.view({1, -1, 1, 1, 1});
  const auto b = bias.view({1, -1, 1, 1, 1});
  for (const auto& x : xs) out.push_back((x - mean5) * inv_std * w + b);

  torch::NoGradGuard g;
  running_mean.mul_(1.0 - momentum_).add_(mean.detach(), momentum_);
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  running_var.mul_(1.0 - momentum_).add_(var.detach() * unbias, momentum_);
  num_batches_tracked += 1;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nn::Conv3d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return nn::Conv3d(nn::Conv3dOptions(in, out, k).stride(stride).padding(pad).bias(false));
}

Shards map(const Shards& xs, const std::function<torch::Tensor(const torch::Tensor&)>& f) {
  Shards out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(f(x));
  return out;
}

}  // namespace

BasicBlock3dImpl::BasicBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t stride) {
  conv1 = register_module("conv1", conv(in, out, 3, stride, 1));
  bn1 = register_module("bn1", SyncBatchNorm3d(out));
  conv2 = register_module("conv2", conv(out, out, 3, 1, 1));
  bn2 = register_module("bn2", SyncBatchNorm3d(out));
  if (stride != 1 || in != out) {
    down_conv = register_module("down_conv", conv(in, out, 1, stride, 0));
    down_bn = register_module("down_bn", SyncBatchNorm3d(out));
  }
}

Shards BasicBlock3dImpl::forward(const Shards& xs) {
  auto y = bn1->forward(map(xs, [&](const torch::Tensor& x) { return conv1->forward(x); }));
  y = map(y, [](const torch::Tensor& t) { return torch::relu(t); });
  y = bn2->forward(map(y, [&](const torch::Tensor& t) { return conv2->forward(t); }));
  Shards identity = xs;
  if (down_conv) {
    identity = down_bn->forward(map(xs, [&](const torch::Tensor& x) { return down_conv->forward(x); }));
  }
  Shards out;
  for (std::size_t i = 0; i < y.size(); ++i) out.push_back(torch::relu(y[i] + identity[i]));
  return out;
}

ResNet3dImpl::ResNet3dImpl(const EncoderConfig& cfg) {
  const auto& w = cfg.widths;
  stem = register_module("stem", conv(1, w[0], 7, 2, 3));
  stem_bn = register_module("stem_bn", SyncBatchNorm3d(w[0]));
  std::int64_t in = w[0];
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < 2; ++b) {
      const std::int64_t stride = (stage > 0 && b == 0) ? 2 : 1;
      blocks_.push_back(register_module(
          "layer" + std::to_string(stage + 1) + "_" + std::to_string(b), BasicBlock3d(in, w[stage], stride)));
      in = w[stage];
    }
  }
  for (auto& m : modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv3d>()) {
      torch::NoGradGuard g;
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    }
  }
}

Shards ResNet3dImpl::forward(const Shards& xs) {
  auto y = stem_bn->forward(map(xs, [&](const torch::Tensor& x) { return stem->forward(x); }));
  y = map(y, [](const torch::Tensor& t) {
    return torch::max_pool3d(torch::relu(t), /*kernel_size=*/3, /*stride=*/2, /*padding=*/1);
  });
  for (auto& b : blocks_) y = b->forward(y);
  return map(y, [](const torch::Tensor& t) { return t.mean({2, 3, 4}); });
}

ProjectionHeadImpl::ProjectionHeadImpl(std::int64_t in, std::int64_t hidden, std::int64_t out) {
  fc1 = register_module("fc1", nn::Linear(nn::LinearOptions(in, hidden).bias(false)));
  fc2 = register_module("fc2", nn::Linear(nn::LinearOptions(hidden, out).bias(false)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& h) {
  return fc2->forward(torch::relu(fc1->forward(h)));
}

SimclrModelImpl::SimclrModelImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", ResNet3d(cfg_));
  head_ = register_module("head", ProjectionHead(cfg_.embedding_dim(), cfg_.projection_hidden,
                                                 cfg_.projection_dim));
}

torch::Tensor SimclrModelImpl::project(const torch::Tensor& h) {
  const auto in = h.dim() == 1 ? h.unsqueeze(0) : h;
  if (in.dim() != 2 || in.size(1) != cfg_.embedding_dim()) {
    throw InvalidArgument("projection head expects embeddings of width " +
                          std::to_string(cfg_.embedding_dim()));
  }
  auto z = head_->forward(in);
  return h.dim() == 1 ? z.squeeze(0) : z;
}

namespace {
std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

SimclrModel init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(seed);
  return SimclrModel(cfg);
}

torch::Tensor to_batch(std::span<const VolumeGrid> volumes) {
  if (volumes.empty()) throw InvalidArgument("empty batch");
  const Shape3 s = volumes.front().shape();
  auto out = torch::empty({static_cast<std::int64_t>(volumes.size()), 1, s[0], s[1], s[2]});
  float* dst = out.data_ptr<float>();
  const std::int64_t n = numel(s);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i].shape() != s) {
      throw InvalidArgument("batch mixes shapes " + to_string(s) + " and " + to_string(volumes[i].shape()));
    }
    std::copy_n(volumes[i].data().data(), n, dst + static_cast<std::int64_t>(i) * n);
  }
  return out;
}

torch::Tensor encode(SimclrModel& model, std::span<const VolumeGrid> batch) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard g;
  auto x = to_batch(batch);
  const auto p = model->parameters();
  if (!p.empty()) x = x.to(p.front().dtype());
  auto h = model->encode(x);
  model->train(was_training);
  require_finite(h, "encoder output");
  return h;
}

torch::Tensor project(SimclrModel& model, const torch::Tensor& h) {
  auto z = model->project(h);
  require_finite(z, "projection");
  return z;
}

}  // namespace brainssl
