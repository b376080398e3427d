#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "brainssl/rng.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

/// Non-overlapping patch grid. Patches are ordered depth-major (row-major
/// over the grid) and each patch is flattened row-major over its voxels.
struct PatchLayout {
  Shape3 patch{25, 16, 16};
  Shape3 grid{6, 12, 12};

  /// Throws InvalidArgument unless every volume extent is divisible by the
  /// patch extent.
  static PatchLayout make(const Shape3& volume, const Shape3& patch);

  std::int64_t num_patches() const { return numel(grid); }
  std::int64_t patch_numel() const { return numel(patch); }
  Shape3 volume_shape() const { return {grid[0] * patch[0], grid[1] * patch[1], grid[2] * patch[2]}; }
  /// Grid coordinate of patch `index`.
  Shape3 coord(std::int64_t index) const;
};

/// (num_patches, patch_numel) float tensor.
torch::Tensor patchify(const VolumeGrid& v, const PatchLayout& layout);
/// (B, 1, D, H, W) -> (B, num_patches, patch_numel).
torch::Tensor patchify(const torch::Tensor& volumes, const PatchLayout& layout);
/// Exact inverse of patchify. Throws InvalidArgument on a count or size
/// mismatch.
VolumeGrid unpatchify(const torch::Tensor& patches, const PatchLayout& layout);
torch::Tensor unpatchify_batch(const torch::Tensor& patches, const PatchLayout& layout);

/// Masked index set M and its complement, both sorted.
struct MaskSet {
  std::vector<std::int64_t> masked;
  std::vector<std::int64_t> visible;
  double ratio = 0.0;

  std::int64_t num_patches() const {
    return static_cast<std::int64_t>(masked.size() + visible.size());
  }
};

/// Uniform subset of round(ratio * num_patches) indices drawn without
/// replacement.
MaskSet sample_mask(std::int64_t num_patches, double ratio, Rng& rng);

/// Fixed 3D sine-cosine table (num_patches, dim): the width is split into
/// three equal groups, one per grid axis, each holding [sin(p w_i), cos(p w_i)]
/// with w_i = 10000^(-i / (dim / 6)). Columns past 6 * (dim / 6) are zero.
torch::Tensor sinusoidal_pos_embed(const PatchLayout& layout, std::int64_t dim);

struct ViTConfig {
  std::string variant = "vit_tiny";
  Shape3 input_shape{150, 192, 192};
  Shape3 patch{25, 16, 16};
  std::int64_t embed_dim = 192;
  std::int64_t depth = 12;
  std::int64_t heads = 3;
  double mlp_ratio = 4.0;
  std::int64_t decoder_embed_dim = 512;
  std::int64_t decoder_depth = 8;
  std::int64_t decoder_heads = 16;
  double mask_ratio = 0.75;
  /// Divide the per-patch squared error by the patch voxel count as well.
  bool per_voxel_loss = false;

  PatchLayout layout() const { return PatchLayout::make(input_shape, patch); }
  void validate() const;
};

/// Pre-norm transformer block with multi-head self-attention.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::int64_t heads_;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Masked autoencoder over 3D patches: the encoder sees only visible
/// tokens; the decoder sees encoded tokens plus a shared learned mask token
/// at every masked position and predicts every patch in voxel space.
class MaeModelImpl : public torch::nn::Module {
 public:
  explicit MaeModelImpl(const ViTConfig& cfg);

  const ViTConfig& config() const { return cfg_; }
  const PatchLayout& layout() const { return layout_; }

  /// patches (B, P, L), visible (B, V) long -> latent (B, V, E).
  torch::Tensor forward_encoder(const torch::Tensor& patches, const torch::Tensor& visible);
  /// latent (B, V, E), visible (B, V) -> predictions (B, P, L).
  torch::Tensor forward_decoder(const torch::Tensor& latent, const torch::Tensor& visible);
  /// Mean-pooled encoder output over all patches (no masking), (B, E).
  torch::Tensor features(const torch::Tensor& volumes);

  std::int64_t last_encoder_tokens() const { return last_encoder_tokens_; }
  std::int64_t last_decoder_mask_tokens() const { return last_decoder_mask_tokens_; }

 private:
  ViTConfig cfg_;
  PatchLayout layout_;
  torch::nn::Linear patch_embed{nullptr}, decoder_embed{nullptr}, decoder_pred{nullptr};
  torch::nn::ModuleList blocks{nullptr}, decoder_blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr}, decoder_norm{nullptr};
  torch::Tensor mask_token, pos_embed, decoder_pos_embed;
  std::int64_t last_encoder_tokens_ = 0;
  std::int64_t last_decoder_mask_tokens_ = 0;
};
TORCH_MODULE(MaeModel);

MaeModel init_mae(const ViTConfig& cfg, std::uint64_t seed);

/// (B, V) long tensor of visible indices, one row per mask.
torch::Tensor visible_index(const std::vector<MaskSet>& masks);
/// (B, P) bool tensor, true at masked positions.
torch::Tensor mask_matrix(const std::vector<MaskSet>& masks, std::int64_t num_patches);

/// Predicted patches (P, L) for one volume under one mask.
torch::Tensor mae_forward(MaeModel& model, const VolumeGrid& v, const MaskSet& mask);

/// (1/|M|) sum_{i in M} ||pred_i - target_i||^2 for a single sample
/// (P, L) or averaged over a batch (B, P, L) with a (B, P) mask. With
/// `per_voxel` the per-patch term is also divided by L. The backward pass is
/// analytic and exactly zero at unmasked positions. Throws InvalidArgument
/// for an empty mask.
torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target,
                       const torch::Tensor& mask, bool per_voxel = false);
torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target, const MaskSet& mask,
                       bool per_voxel = false);

/// Largest relative error between the analytic mae_loss gradient and central
/// finite differences, in float64.
double mae_loss_grad_check(const torch::Tensor& pred, const torch::Tensor& target,
                           const torch::Tensor& mask, double step = 1e-5, double floor = 1e-6);

}  // namespace brainssl
