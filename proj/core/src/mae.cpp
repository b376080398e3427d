#include "brainssl/mae.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "brainssl/error.hpp"
#include "brainssl/simclr.hpp"

namespace brainssl {

namespace nn = torch::nn;

PatchLayout PatchLayout::make(const Shape3& volume, const Shape3& patch) {
  PatchLayout l;
  l.patch = patch;
  for (int i = 0; i < 3; ++i) {
    if (patch[i] < 1 || volume[i] < 1 || volume[i] % patch[i] != 0) {
      throw InvalidArgument("volume shape " + to_string(volume) + " is not divisible by patch " +
                            to_string(patch));
    }
    l.grid[i] = volume[i] / patch[i];
  }
  return l;
}

Shape3 PatchLayout::coord(std::int64_t index) const {
  return {index / (grid[1] * grid[2]), (index / grid[2]) % grid[1], index % grid[2]};
}

torch::Tensor patchify(const torch::Tensor& x, const PatchLayout& l) {
  if (x.dim() != 5 || x.size(1) != 1) throw InvalidArgument("patchify expects (B, 1, D, H, W)");
  const Shape3 vs = l.volume_shape();
  if (x.size(2) != vs[0] || x.size(3) != vs[1] || x.size(4) != vs[2]) {
    throw InvalidArgument("volume does not match patch layout " + to_string(vs));
  }
  const auto b = x.size(0);
  return x.reshape({b, l.grid[0], l.patch[0], l.grid[1], l.patch[1], l.grid[2], l.patch[2]})
      .permute({0, 1, 3, 5, 2, 4, 6})
      .reshape({b, l.num_patches(), l.patch_numel()});
}

torch::Tensor patchify(const VolumeGrid& v, const PatchLayout& l) {
  const PatchLayout checked = PatchLayout::make(v.shape(), l.patch);
  const VolumeGrid one[] = {v};
  return patchify(to_batch(one), checked).squeeze(0).contiguous();
}

torch::Tensor unpatchify_batch(const torch::Tensor& p, const PatchLayout& l) {
  if (p.dim() != 3 || p.size(1) != l.num_patches() || p.size(2) != l.patch_numel()) {
    throw InvalidArgument("expected (B, " + std::to_string(l.num_patches()) + ", " +
                          std::to_string(l.patch_numel()) + ") patches");
  }
  const Shape3 vs = l.volume_shape();
  return p.reshape({p.size(0), l.grid[0], l.grid[1], l.grid[2], l.patch[0], l.patch[1], l.patch[2]})
      .permute({0, 1, 4, 2, 5, 3, 6})
      .reshape({p.size(0), 1, vs[0], vs[1], vs[2]});
}

VolumeGrid unpatchify(const torch::Tensor& patches, const PatchLayout& l) {
  if (patches.dim() != 2) throw InvalidArgument("expected (num_patches, patch_numel) patches");
  const auto vol = unpatchify_batch(patches.unsqueeze(0), l).to(torch::kFloat32).contiguous();
  std::vector<float> data(vol.data_ptr<float>(), vol.data_ptr<float>() + vol.numel());
  return VolumeGrid(l.volume_shape(), std::move(data));
}

MaskSet sample_mask(std::int64_t num_patches, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("mask ratio must lie in [0, 1]");
  if (num_patches < 1) throw InvalidArgument("need at least one patch");
  const auto n_mask = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(num_patches)));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(num_patches));
  for (std::int64_t i = 0; i < num_patches; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first n_mask slots are a uniform subset.
  for (std::int64_t i = 0; i < n_mask; ++i) {
    const auto j = rng.uniform_int(i, num_patches - 1);
    std::swap(idx[i], idx[j]);
  }
  MaskSet m;
  m.ratio = ratio;
  m.masked.assign(idx.begin(), idx.begin() + n_mask);
  m.visible.assign(idx.begin() + n_mask, idx.end());
  std::sort(m.masked.begin(), m.masked.end());
  std::sort(m.visible.begin(), m.visible.end());
  return m;
}

torch::Tensor sinusoidal_pos_embed(const PatchLayout& l, std::int64_t dim) {
  if (dim < 6) throw InvalidArgument("positional embedding width must be >= 6, got " + std::to_string(dim));
  const std::int64_t half = dim / 6;
  auto table = torch::zeros({l.num_patches(), dim}, torch::kFloat64);
  auto acc = table.accessor<double, 2>();
  for (std::int64_t p = 0; p < l.num_patches(); ++p) {
    const Shape3 c = l.coord(p);
    for (int axis = 0; axis < 3; ++axis) {
      const std::int64_t base = axis * 2 * half;
      for (std::int64_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        const double arg = static_cast<double>(c[axis]) * omega;
        acc[p][base + i] = std::sin(arg);
        acc[p][base + half + i] = std::cos(arg);
      }
    }
  }
  return table.to(torch::kFloat32);
}

void ViTConfig::validate() const {
  if (variant != "vit_tiny") throw InvalidArgument("unsupported ViT variant '" + variant + "'");
  if (embed_dim < 1 || depth < 1 || heads < 1 || decoder_embed_dim < 1 || decoder_depth < 1 ||
      decoder_heads < 1) {
    throw InvalidArgument("ViT sizes must be positive");
  }
  if (embed_dim % heads != 0 || decoder_embed_dim % decoder_heads != 0) {
    throw InvalidArgument("embedding width must be divisible by the head count");
  }
  if (embed_dim < 6 || decoder_embed_dim < 6) {
    throw InvalidArgument("embedding widths must be >= 6 for 3D sine-cosine positions");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw InvalidArgument("mask ratio must lie in [0, 1)");
  if (!(mlp_ratio > 0.0)) throw InvalidArgument("mlp ratio must be > 0");
  (void)layout();
}

// ---------------------------------------------------------------------------

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio)
    : heads_(heads) {
  const auto hidden = static_cast<std::int64_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
  qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
  proj = register_module("proj", nn::Linear(dim, dim));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
  fc1 = register_module("fc1", nn::Linear(dim, hidden));
  fc2 = register_module("fc2", nn::Linear(hidden, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), t = x.size(1), d = x.size(2);
  auto q = qkv->forward(norm1->forward(x)).reshape({b, t, 3, heads_, d / heads_}).permute({2, 0, 3, 1, 4});
  auto a = at::scaled_dot_product_attention(q[0], q[1], q[2]);
  auto y = x + proj->forward(a.transpose(1, 2).reshape({b, t, d}));
  return y + fc2->forward(torch::gelu(fc1->forward(norm2->forward(y))));
}

MaeModelImpl::MaeModelImpl(const ViTConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layout_ = cfg_.layout();
  const auto e = cfg_.embed_dim, de = cfg_.decoder_embed_dim, l = layout_.patch_numel();
  patch_embed = register_module("patch_embed", nn::Linear(l, e));
  blocks = register_module("blocks", nn::ModuleList());
  for (std::int64_t i = 0; i < cfg_.depth; ++i) blocks->push_back(TransformerBlock(e, cfg_.heads, cfg_.mlp_ratio));
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({e}).eps(1e-6)));
  decoder_embed = register_module("decoder_embed", nn::Linear(e, de));
  decoder_blocks = register_module("decoder_blocks", nn::ModuleList());
  for (std::int64_t i = 0; i < cfg_.decoder_depth; ++i) {
    decoder_blocks->push_back(TransformerBlock(de, cfg_.decoder_heads, cfg_.mlp_ratio));
  }
  decoder_norm = register_module("decoder_norm", nn::LayerNorm(nn::LayerNormOptions({de}).eps(1e-6)));
  decoder_pred = register_module("decoder_pred", nn::Linear(de, l));
  mask_token = register_parameter("mask_token", torch::zeros({de}));
  pos_embed = register_buffer("pos_embed", sinusoidal_pos_embed(layout_, e));
  decoder_pos_embed = register_buffer("decoder_pos_embed", sinusoidal_pos_embed(layout_, de));

  torch::NoGradGuard g;
  for (auto& m : modules(/*include_self=*/false)) {
    if (auto* lin = m->as<nn::Linear>()) {
      nn::init::xavier_uniform_(lin->weight);
      nn::init::zeros_(lin->bias);
    }
  }
  nn::init::normal_(mask_token, 0.0, 0.02);
}

torch::Tensor MaeModelImpl::forward_encoder(const torch::Tensor& patches, const torch::Tensor& visible) {
  const auto b = patches.size(0), v = visible.size(1);
  const auto idx = visible.unsqueeze(-1);
  const auto kept = patches.gather(1, idx.expand({b, v, patches.size(2)}));
  auto x = patch_embed->forward(kept) + pos_embed.index_select(0, visible.flatten()).view({b, v, -1});
  last_encoder_tokens_ = x.size(1);
  for (const auto& blk : *blocks) x = blk->as<TransformerBlock>()->forward(x);
  return norm->forward(x);
}

torch::Tensor MaeModelImpl::forward_decoder(const torch::Tensor& latent, const torch::Tensor& visible) {
  const auto b = latent.size(0), v = latent.size(1), p = layout_.num_patches();
  const auto de = cfg_.decoder_embed_dim;
  const auto y = decoder_embed->forward(latent);
  auto full = mask_token.view({1, 1, de}).expand({b, p, de});
  full = full.scatter(1, visible.unsqueeze(-1).expand({b, v, de}), y);
  last_decoder_mask_tokens_ = p - v;
  auto x = full + decoder_pos_embed.unsqueeze(0);
  for (const auto& blk : *decoder_blocks) x = blk->as<TransformerBlock>()->forward(x);
  return decoder_pred->forward(decoder_norm->forward(x));
}

torch::Tensor MaeModelImpl::features(const torch::Tensor& volumes) {
  const auto patches = patchify(volumes, layout_);
  const auto b = patches.size(0);
  const auto all = torch::arange(layout_.num_patches(), torch::kLong).unsqueeze(0).expand({b, -1}).contiguous();
  return forward_encoder(patches, all).mean(1);
}

namespace {
std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

MaeModel init_mae(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(seed);
  return MaeModel(cfg);
}

torch::Tensor visible_index(const std::vector<MaskSet>& masks) {
  if (masks.empty()) throw InvalidArgument("no masks");
  const auto v = static_cast<std::int64_t>(masks.front().visible.size());
  auto out = torch::empty({static_cast<std::int64_t>(masks.size()), v}, torch::kLong);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (static_cast<std::int64_t>(masks[i].visible.size()) != v) {
      throw InvalidArgument("masks in one batch must keep the same number of patches");
    }
    std::copy(masks[i].visible.begin(), masks[i].visible.end(), out[i].data_ptr<std::int64_t>());
  }
  return out;
}

torch::Tensor mask_matrix(const std::vector<MaskSet>& masks, std::int64_t num_patches) {
  auto out = torch::zeros({static_cast<std::int64_t>(masks.size()), num_patches}, torch::kBool);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (auto m : masks[i].masked) out[i][m] = true;
  }
  return out;
}

torch::Tensor mae_forward(MaeModel& model, const VolumeGrid& v, const MaskSet& mask) {
  const auto& layout = model->layout();
  if (mask.num_patches() != layout.num_patches()) throw InvalidArgument("mask does not match layout");
  const VolumeGrid one[] = {v};
  const auto patches = patchify(to_batch(one), layout);
  const auto vis = visible_index({mask});
  auto pred = model->forward_decoder(model->forward_encoder(patches, vis), vis).squeeze(0);
  require_finite(pred, "MAE prediction");
  return pred;
}

// ---------------------------------------------------------------------------

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

class MaskedMseFunction : public torch::autograd::Function<MaskedMseFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& pred,
                               const torch::Tensor& target, const torch::Tensor& weight) {
    const auto diff = pred - target;
    ctx->save_for_backward({diff, weight});
    return (diff.pow(2).sum(-1) * weight).sum();
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    const auto grad = 2.0 * saved[0] * saved[1].unsqueeze(-1) * grad_out[0];
    return {grad, torch::Tensor(), torch::Tensor()};
  }
};

// Per-patch weights 1 / (B |M_b| [L]) at masked positions, zero elsewhere.
torch::Tensor loss_weights(const torch::Tensor& pred, const torch::Tensor& mask, bool per_voxel) {
  const auto m = mask.to(pred.dtype());
  const auto counts = m.sum(1, /*keepdim=*/true);
  if ((counts == 0).any().item<bool>()) throw InvalidArgument("mae_loss needs a nonempty mask");
  double scale = static_cast<double>(pred.size(0));
  if (per_voxel) scale *= static_cast<double>(pred.size(2));
  return m / counts / scale;
}

}  // namespace

torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask,
                       bool per_voxel) {
  if (pred.sizes() != target.sizes()) throw InvalidArgument("prediction and target shapes differ");
  const bool single = pred.dim() == 2;
  const auto p = single ? pred.unsqueeze(0) : pred;
  const auto t = single ? target.unsqueeze(0) : target;
  const auto m = mask.dim() == 1 ? mask.unsqueeze(0) : mask;
  if (p.dim() != 3 || m.dim() != 2 || m.size(0) != p.size(0) || m.size(1) != p.size(1)) {
    throw InvalidArgument("mask must be (B, P) matching predictions (B, P, L)");
  }
  return MaskedMseFunction::apply(p, t.detach(), loss_weights(p, m, per_voxel).detach());
}

torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target, const MaskSet& mask,
                       bool per_voxel) {
  if (mask.masked.empty()) throw InvalidArgument("mae_loss needs a nonempty mask");
  const auto p = pred.dim() == 2 ? pred.size(0) : pred.size(1);
  return mae_loss(pred, target, mask_matrix({mask}, p).squeeze(0), per_voxel);
}

double mae_loss_grad_check(const torch::Tensor& pred_in, const torch::Tensor& target,
                           const torch::Tensor& mask, double step, double floor) {
  auto pred = pred_in.to(torch::kFloat64).detach().clone().requires_grad_(true);
  const auto tgt = target.to(torch::kFloat64);
  mae_loss(pred, tgt, mask).backward();
  const auto analytic = pred.grad().contiguous();
  torch::NoGradGuard g;
  auto probe = pred.detach().clone().contiguous();
  auto* data = probe.data_ptr<double>();
  const auto* grad = analytic.data_ptr<double>();
  double worst = 0.0;
  for (std::int64_t i = 0; i < probe.numel(); ++i) {
    const double orig = data[i];
    data[i] = orig + step;
    const double up = mae_loss(probe, tgt, mask).item<double>();
    data[i] = orig - step;
    const double down = mae_loss(probe, tgt, mask).item<double>();
    data[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(grad[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(grad[i] - fd) / scale);
  }
  return worst;
}

}  // namespace brainssl
