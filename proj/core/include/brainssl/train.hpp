#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "brainssl/augment.hpp"
#include "brainssl/checkpoint.hpp"
#include "brainssl/mae.hpp"
#include "brainssl/manifest.hpp"
#include "brainssl/report.hpp"
#include "brainssl/sampler.hpp"
#include "brainssl/simclr.hpp"

namespace brainssl {

enum class Objective { kSimclr, kMae, kSupervised };
std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

/// AdamW with linear warmup followed by cosine decay to zero (or a constant
/// rate), evaluated per optimisation step.
struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int warmup_epochs = 0;
  std::string schedule = "cosine";  // "cosine" or "constant"

  double lr_at(std::int64_t step, std::int64_t steps_per_epoch, int epochs) const;
  void validate() const;
};

std::unique_ptr<torch::optim::AdamW> make_adamw(std::vector<torch::Tensor> params, const OptimConfig& o);
/// Sets the learning rate of every parameter group of an AdamW optimizer.
void set_lr(torch::optim::Optimizer& opt, double lr);

struct TrainConfig {
  Objective objective = Objective::kSimclr;
  std::string architecture = "resnet18_3d";  // "resnet18_3d" or "vit_tiny"
  int epochs = 150;
  int batch_size = 72;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string augment = "simclr";
  std::optional<AugmentSpec> augment_spec;  // replaces the named pipeline
  int devices = 1;
  bool float64 = false;
  EncoderConfig encoder;
  ViTConfig vit;
  std::filesystem::path output_dir;  // empty: nothing is written
  bool save_checkpoints = true;
  std::string config_text;
  std::optional<std::filesystem::path> resume;

  Shape3 input_shape() const;
  AugmentSpec pipeline() const;
  /// Throws InvalidArgument.
  void validate() const;
};

/// Stacks volumes into a (B, 1, D, H, W) tensor of `dtype`.
torch::Tensor stack_volumes(std::span<const VolumeGrid> volumes, torch::Dtype dtype);

/// Loads volumes by scan id on first use and keeps them. Volumes whose
/// shape or axis order differ from `shape` go through preprocess().
class VolumeCache {
 public:
  VolumeCache(const DatasetManifest& m, Shape3 shape);
  const VolumeGrid& get(const std::string& patient_id, const std::string& scan_id);
  const Shape3& shape() const { return shape_; }

 private:
  const DatasetManifest* manifest_;
  Shape3 shape_;
  std::map<std::string, VolumeGrid> cache_;
};

/// SimCLR loss for a batch of pairs split across `devices` simulated workers:
/// each worker runs its shard through the encoder in lock step with
/// synchronised batch-norm statistics, the projections are gathered, and
/// each worker adds the NT-Xent terms of its own anchors.
torch::Tensor simclr_batch_loss(SimclrModel& model, const torch::Tensor& a, const torch::Tensor& b, int devices);

class SimclrTrainer {
 public:
  explicit SimclrTrainer(const TrainConfig& cfg);
  double step(std::span<const VolumeGrid> a, std::span<const VolumeGrid> b, double lr);
  SimclrModel& model() { return model_; }
  torch::optim::AdamW& optimizer() { return *opt_; }
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& c);

 private:
  TrainConfig cfg_;
  SimclrModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> opt_;
};

class MaeTrainer {
 public:
  explicit MaeTrainer(const TrainConfig& cfg);
  double step(std::span<const VolumeGrid> x, const std::vector<MaskSet>& masks, double lr);
  MaeModel& model() { return model_; }
  torch::optim::AdamW& optimizer() { return *opt_; }
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& c);

 private:
  TrainConfig cfg_;
  MaeModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> opt_;
};

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;  // global
  double loss = 0.0;
  double lr = 0.0;
  const std::vector<MaskSet>* masks = nullptr;  // MAE only
};
using StepHook = std::function<void(const StepRecord&)>;

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  std::vector<double> step_loss;
  std::vector<std::filesystem::path> checkpoints;
  Checkpoint last;
};

/// Pre-training over the train and pretrain-only patients. With an output
/// directory, writes checkpoints/epoch_<k>.ckpt, loss.csv, schedule.jsonl
/// and run.json. A non-finite loss saves checkpoints/diverged.ckpt and
/// throws NumericError.
PretrainResult pretrain_simclr(const TrainConfig& cfg, const DatasetManifest& m, const StepHook& hook = {});
PretrainResult pretrain_mae(const TrainConfig& cfg, const DatasetManifest& m, const StepHook& hook = {});

/// Checkpoint of a freshly initialised model (epoch 0).
Checkpoint initial_checkpoint(const TrainConfig& cfg);

enum class TaskKind { kBinary, kRegression };

struct DownstreamTask {
  std::string name;
  TaskKind kind = TaskKind::kBinary;
  std::string label_field = "sex";  // sex, diagnosis, age or stroke_scale
  std::string positive, negative;   // diagnosis classes
  std::optional<std::pair<double, double>> clamp;  // applied to predictions at evaluation

  std::string metric() const { return kind == TaskKind::kBinary ? "auc" : "mean_abs_err"; }
  std::optional<double> target(const PatientRecord& p) const;
  std::optional<BinaryLabel> stratify() const;
  void validate() const;

  /// synthetic-asymmetry, synthetic-size, synthetic-lesions, sex, age,
  /// stroke-scale and ad (diagnosis AD vs CN).
  static DownstreamTask named(std::string_view name);
};

struct HeadTraining {
  int epochs = 100;
  int batch_size = 32;
  OptimConfig optim;
};

struct EvalConfig {
  HeadTraining probe{100, 32, {1e-2, 1e-4}};
  HeadTraining finetune{100, 16, {1e-4, 1e-4}};
  HeadTraining supervised{300, 16, {1e-3, 1e-4}};
  std::uint64_t seed = 0;
  std::string config_hash;

  /// Probe and fine-tune runs are capped at 100 epochs.
  void validate() const;
};

inline constexpr int kMaxDownstreamEpochs = 100;

/// Frozen encoder, one linear head on standardised features, no
/// augmentation. Throws NumericError if the encoder checksum changes.
EvalReport linear_probe(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                        const EvalConfig& cfg);
/// All parameters trainable with batch-norm statistics frozen. MAE
/// checkpoints train with the supervised augmentation stack, SimCLR ones
/// without augmentation.
EvalReport finetune(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                    const EvalConfig& cfg);
/// Encoder of `cfg.architecture` trained from scratch with the supervised
/// augmentation stack for eval.supervised.epochs epochs.
EvalReport train_supervised(const TrainConfig& cfg, const DatasetManifest& m, const DownstreamTask& task,
                            const EvalConfig& cfg_eval);

/// Runs `mode` on nested training subsets of every fraction for every seed,
/// with val and test fixed. Rows come out ordered by seed, then fraction.
std::vector<SweepRow> fraction_sweep(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                                     EvalMode mode, const EvalConfig& cfg, std::span<const std::uint64_t> seeds,
                                     std::span<const double> fractions = fraction_ladder());

/// "SimCLR", "MAE", "ResNet-18" or "ViT-T" for a checkpoint kind and architecture.
std::string model_label(const Checkpoint& ckpt);

}  // namespace brainssl
