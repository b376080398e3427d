#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "brainssl/volume.hpp"

namespace brainssl {

/// A batch split across simulated data-parallel workers. A single-element
/// vector is the ordinary single-process case.
using Shards = std::vector<torch::Tensor>;

struct EncoderConfig {
  std::string architecture = "resnet18_3d";
  std::array<std::int64_t, 4> widths{64, 128, 256, 512};
  Shape3 input_shape{150, 192, 192};
  std::int64_t projection_dim = 64;
  std::int64_t projection_hidden = 512;
  double temperature = 0.5;

  std::int64_t embedding_dim() const { return widths[3]; }
  /// Throws InvalidArgument for non-positive widths, tau <= 0, or an input
  /// smaller than 32 voxels on an axis (five stride-2 reductions).
  void validate() const;
};

/// Batch normalisation whose training-mode statistics are reduced over all
/// shards, i.e. synchronised batch norm for simulated workers.
class SyncBatchNorm3dImpl : public torch::nn::Module {
 public:
  explicit SyncBatchNorm3dImpl(std::int64_t channels, double momentum = 0.1, double eps = 1e-5);
  Shards forward(const Shards& xs);

  torch::Tensor weight, bias, running_mean, running_var, num_batches_tracked;

 private:
  double momentum_;
  double eps_;
};
TORCH_MODULE(SyncBatchNorm3d);

class BasicBlock3dImpl : public torch::nn::Module {
 public:
  BasicBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t stride);
  Shards forward(const Shards& xs);

 private:
  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, down_conv{nullptr};
  SyncBatchNorm3d bn1{nullptr}, bn2{nullptr}, down_bn{nullptr};
};
TORCH_MODULE(BasicBlock3d);

/// 3D ResNet-18: 7^3 stride-2 stem, 3^3 stride-2 max-pool, four stages of two
/// basic blocks (stages 2-4 downsample by 2), global average pooling.
class ResNet3dImpl : public torch::nn::Module {
 public:
  explicit ResNet3dImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x) { return forward(Shards{x}).front(); }
  /// Input shards (B_w, 1, D, H, W) -> embeddings (B_w, widths[3]).
  Shards forward(const Shards& xs);

 private:
  torch::nn::Conv3d stem{nullptr};
  SyncBatchNorm3d stem_bn{nullptr};
  std::vector<BasicBlock3d> blocks_;
};
TORCH_MODULE(ResNet3d);

/// Two bias-free linear layers with a ReLU in between.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(std::int64_t in, std::int64_t hidden, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& h);

 private:
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// Encoder f and projection head g.
class SimclrModelImpl : public torch::nn::Module {
 public:
  explicit SimclrModelImpl(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  ResNet3d& encoder() { return encoder_; }
  ProjectionHead& head() { return head_; }

  torch::Tensor encode(const torch::Tensor& x) { return encoder_->forward(x); }
  torch::Tensor project(const torch::Tensor& h);

 private:
  EncoderConfig cfg_;
  ResNet3d encoder_{nullptr};
  ProjectionHead head_{nullptr};
};
TORCH_MODULE(SimclrModel);

/// Builds the model with parameters drawn from a generator seeded by `seed`.
SimclrModel init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Stacks volumes of one shape into a (B, 1, D, H, W) float tensor.
torch::Tensor to_batch(std::span<const VolumeGrid> volumes);

/// Embeddings of a batch in inference mode. Throws InvalidArgument for
/// mixed shapes and NumericError for non-finite activations.
torch::Tensor encode(SimclrModel& model, std::span<const VolumeGrid> batch);

/// Projection of embeddings h (B x embedding_dim, or a single vector).
torch::Tensor project(SimclrModel& model, const torch::Tensor& h);

/// Throws NumericError when `t` contains NaN or infinity.
void require_finite(const torch::Tensor& t, const char* what);

}  // namespace brainssl
