#include "brainssl/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "brainssl/config.hpp"
#include "brainssl/contrastive.hpp"
#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"

namespace brainssl {

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kSimclr: return "simclr";
    case Objective::kMae: return "mae";
    case Objective::kSupervised: return "supervised";
  }
  return "?";
}

Objective parse_objective(std::string_view s) {
  if (s == "simclr") return Objective::kSimclr;
  if (s == "mae") return Objective::kMae;
  if (s == "supervised") return Objective::kSupervised;
  throw InvalidArgument("unknown objective '" + std::string(s) + "' (expected simclr, mae or supervised)");
}

double OptimConfig::lr_at(std::int64_t step, std::int64_t steps_per_epoch, int epochs) const {
  const std::int64_t total = steps_per_epoch * epochs;
  const std::int64_t warm = steps_per_epoch * warmup_epochs;
  if (step < warm) return lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (schedule == "constant") return lr;
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(std::max<std::int64_t>(1, total - warm));
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

void OptimConfig::validate() const {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw InvalidArgument("learning rate and weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("AdamW betas must lie in [0, 1)");
  }
  if (warmup_epochs < 0) throw InvalidArgument("warmup epochs must be >= 0");
  if (schedule != "cosine" && schedule != "constant") {
    throw InvalidArgument("schedule must be cosine or constant, got '" + schedule + "'");
  }
}

Shape3 TrainConfig::input_shape() const {
  return architecture == "vit_tiny" ? vit.input_shape : encoder.input_shape;
}

AugmentSpec TrainConfig::pipeline() const {
  return augment_spec ? *augment_spec : build_pipeline(augment, input_shape());
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be > 0");
  if (architecture != "resnet18_3d" && architecture != "vit_tiny") {
    throw InvalidArgument("unknown architecture '" + architecture + "'");
  }
  if (objective == Objective::kSimclr) {
    if (architecture != "resnet18_3d") throw InvalidArgument("SimCLR pre-training uses the resnet18_3d encoder");
    if (batch_size < 2) throw InvalidArgument("SimCLR needs a batch of at least 2 patients");
  }
  if (objective == Objective::kMae && architecture != "vit_tiny") {
    throw InvalidArgument("MAE pre-training uses the vit_tiny encoder");
  }
  if (batch_size < 1) throw InvalidArgument("batch size must be > 0");
  if (devices < 1 || devices > batch_size) throw InvalidArgument("devices must lie in [1, batch_size]");
  if (architecture == "vit_tiny") {
    vit.validate();
  } else {
    encoder.validate();
  }
  optim.validate();
  pipeline().validate();
}

std::unique_ptr<torch::optim::AdamW> make_adamw(std::vector<torch::Tensor> params, const OptimConfig& o) {
  return std::make_unique<torch::optim::AdamW>(
      std::move(params), torch::optim::AdamWOptions(o.lr).betas({o.beta1, o.beta2}).weight_decay(o.weight_decay));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

torch::Tensor stack_volumes(std::span<const VolumeGrid> volumes, torch::Dtype dtype) {
  return to_batch(volumes).to(dtype);
}

VolumeCache::VolumeCache(const DatasetManifest& m, Shape3 shape) : manifest_(&m), shape_(shape) {}

const VolumeGrid& VolumeCache::get(const std::string& patient_id, const std::string& scan_id) {
  if (const auto it = cache_.find(scan_id); it != cache_.end()) return it->second;
  const auto* p = manifest_->find(patient_id);
  if (!p) throw InvalidArgument("unknown patient '" + patient_id + "'");
  const auto scan = std::find_if(p->scans.begin(), p->scans.end(), [&](const auto& s) { return s.scan_id == scan_id; });
  if (scan == p->scans.end()) throw InvalidArgument("patient '" + patient_id + "' has no scan '" + scan_id + "'");
  VolumeGrid v = read_volume(scan->uri);
  if (v.shape() != shape_ || v.axis_order() != kDepthFirst) v = preprocess(v, shape_);
  return cache_.emplace(scan_id, std::move(v)).first->second;
}

// ---------------------------------------------------------------------------

torch::Tensor simclr_batch_loss(SimclrModel& model, const torch::Tensor& a, const torch::Tensor& b, int devices) {
  const auto n = a.size(0);
  if (b.sizes() != a.sizes()) throw InvalidArgument("view batches differ in shape");
  if (devices < 1 || devices > n) throw InvalidArgument("need between 1 and N simulated devices");
  Shards shards;
  for (std::int64_t w = 0; w < devices; ++w) {
    const auto lo = w * n / devices, hi = (w + 1) * n / devices;
    shards.push_back(torch::cat({a.slice(0, lo, hi), b.slice(0, lo, hi)}));
  }
  const auto h = model->encoder()->forward(shards);
  std::vector<torch::Tensor> za, zb;
  for (std::int64_t w = 0; w < devices; ++w) {
    const auto z = model->project(h[w]);
    const auto k = z.size(0) / 2;
    za.push_back(z.slice(0, 0, k));
    zb.push_back(z.slice(0, k));
  }
  // All-gather: every worker sees every projection as a negative.
  za.insert(za.end(), zb.begin(), zb.end());
  const auto z = torch::cat(za);
  const double tau = model->config().temperature;
  if (devices == 1) return nt_xent_loss(z, tau);
  torch::Tensor total;
  for (std::int64_t w = 0; w < devices; ++w) {
    auto part = nt_xent_partial(z, tau, shard_anchor_mask(n, devices, w));
    total = total.defined() ? total + part : part;
  }
  return total;
}

namespace {

torch::Dtype dtype_of(const TrainConfig& c) { return c.float64 ? torch::kFloat64 : torch::kFloat32; }

void base_metadata(Checkpoint& c, const TrainConfig& cfg) {
  c.config_text = cfg.config_text;
  c.metadata = model_entries(cfg);
  c.metadata["objective"] = std::string(to_string(cfg.objective));
  c.metadata["seed"] = std::to_string(cfg.seed);
  c.metadata["config_hash"] = sha256_hex(cfg.config_text);
}

void check_kind(const Checkpoint& c, const char* kind) {
  if (c.kind != kind) throw InvalidArgument("expected a " + std::string(kind) + " checkpoint, got '" + c.kind + "'");
}

}  // namespace

SimclrTrainer::SimclrTrainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  model_ = init_encoder(cfg_.encoder, cfg_.seed);
  model_->to(dtype_of(cfg_));
  opt_ = make_adamw(model_->parameters(), cfg_.optim);
}

double SimclrTrainer::step(std::span<const VolumeGrid> a, std::span<const VolumeGrid> b, double lr) {
  model_->train();
  const auto n = static_cast<int>(a.size());
  auto loss = simclr_batch_loss(model_, stack_volumes(a, dtype_of(cfg_)), stack_volumes(b, dtype_of(cfg_)),
                                std::min(cfg_.devices, n));
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw NumericError("SimCLR loss is not finite");
  set_lr(*opt_, lr);
  opt_->zero_grad();
  loss.backward();
  opt_->step();
  return value;
}

Checkpoint SimclrTrainer::checkpoint() const {
  Checkpoint c;
  c.kind = "simclr";
  base_metadata(c, cfg_);
  add_module_state(c, *model_, "model.");
  add_optimizer_state(c, *opt_, *model_, "optim.");
  return c;
}

void SimclrTrainer::restore(const Checkpoint& c) {
  check_kind(c, "simclr");
  load_module_state(c, *model_, "model.");
  load_optimizer_state(c, *opt_, *model_, "optim.");
}

MaeTrainer::MaeTrainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  model_ = init_mae(cfg_.vit, cfg_.seed);
  model_->to(dtype_of(cfg_));
  opt_ = make_adamw(model_->parameters(), cfg_.optim);
}

double MaeTrainer::step(std::span<const VolumeGrid> x, const std::vector<MaskSet>& masks, double lr) {
  if (masks.size() != x.size()) throw InvalidArgument("need one mask per volume");
  const auto& layout = model_->layout();
  for (const auto& m : masks) {
    if (m.num_patches() != layout.num_patches()) throw InvalidArgument("mask does not match the patch layout");
    if (m.ratio != cfg_.vit.mask_ratio) throw InvalidArgument("mask ratio differs from the configured ratio");
  }
  model_->train();
  const auto patches = patchify(stack_volumes(x, dtype_of(cfg_)), layout);
  const auto vis = visible_index(masks);
  const auto pred = model_->forward_decoder(model_->forward_encoder(patches, vis), vis);
  auto loss = mae_loss(pred, patches, mask_matrix(masks, layout.num_patches()), cfg_.vit.per_voxel_loss);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw NumericError("MAE loss is not finite");
  set_lr(*opt_, lr);
  opt_->zero_grad();
  loss.backward();
  opt_->step();
  return value;
}

Checkpoint MaeTrainer::checkpoint() const {
  Checkpoint c;
  c.kind = "mae";
  base_metadata(c, cfg_);
  add_module_state(c, *model_, "model.");
  add_optimizer_state(c, *opt_, *model_, "optim.");
  return c;
}

void MaeTrainer::restore(const Checkpoint& c) {
  check_kind(c, "mae");
  load_module_state(c, *model_, "model.");
  load_optimizer_state(c, *opt_, *model_, "optim.");
}

Checkpoint initial_checkpoint(const TrainConfig& cfg) {
  Checkpoint c;
  if (cfg.architecture == "vit_tiny") {
    TrainConfig t = cfg;
    t.objective = Objective::kMae;
    c = MaeTrainer(t).checkpoint();
  } else {
    TrainConfig t = cfg;
    t.objective = Objective::kSimclr;
    t.batch_size = std::max(t.batch_size, 2);
    c = SimclrTrainer(t).checkpoint();
  }
  c.metadata["epoch"] = "0";
  c.metadata["global_step"] = "0";
  return c;
}

// ---------------------------------------------------------------------------

namespace {

DatasetManifest pretraining_pool(const DatasetManifest& m) {
  DatasetManifest pool = m;
  for (auto& [id, s] : pool.split) {
    if (s == Split::kPretrainOnly) s = Split::kTrain;
  }
  return pool;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

using StepFn = std::function<double(std::span<const ScheduleEntry>, std::int64_t first_position, const Rng& epoch_rng,
                                    double lr, StepRecord& rec)>;

template <typename Trainer>
PretrainResult run_pretraining(const TrainConfig& cfg, const DatasetManifest& m, Trainer& trainer, int min_batch,
                               const StepFn& step_fn, const StepHook& hook) {
  const DatasetManifest pool = pretraining_pool(m);
  const auto n = static_cast<std::int64_t>(pool.count(Split::kTrain));
  if (n == 0) throw DegenerateInput("no training or pretrain-only patients to pre-train on");
  const std::int64_t bs = cfg.batch_size;
  const std::int64_t steps_per_epoch = n / bs + (n % bs >= min_batch ? 1 : 0);
  if (steps_per_epoch == 0) {
    throw DegenerateInput("pool of " + std::to_string(n) + " patients is smaller than one batch");
  }

  int start_epoch = 1;
  std::int64_t global_step = 0;
  if (cfg.resume) {
    const auto c = load_checkpoint(*cfg.resume);
    trainer.restore(c);
    start_epoch = std::stoi(c.meta("epoch")) + 1;
    global_step = std::stoll(c.meta("global_step"));
  }

  const bool files = !cfg.output_dir.empty();
  const auto ckpt_dir = cfg.output_dir / "checkpoints";
  std::ofstream loss_csv, sched_out;
  if (files) {
    std::filesystem::create_directories(ckpt_dir);
    const auto mode = cfg.resume ? std::ios::app : std::ios::trunc;
    loss_csv.open(cfg.output_dir / "loss.csv", mode);
    sched_out.open(cfg.output_dir / "schedule.jsonl", mode);
    if (!loss_csv || !sched_out) throw IoError("cannot write into " + cfg.output_dir.string());
    if (!cfg.resume) loss_csv << "epoch,step,loss,lr\n";
  }

  PretrainResult result;
  const Rng root = Rng(cfg.seed).substream("pretrain");
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto sched = epoch_schedule(pool, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    if (files) append_schedule(sched, epoch, sched_out);
    const Rng epoch_rng = root.substream(static_cast<std::uint64_t>(epoch));
    double sum = 0.0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const auto lo = s * bs;
      const auto hi = std::min<std::int64_t>(lo + bs, n);
      const std::span<const ScheduleEntry> batch(sched.entries.data() + lo, static_cast<std::size_t>(hi - lo));
      const double lr = cfg.optim.lr_at(global_step, steps_per_epoch, cfg.epochs);
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = global_step;
      rec.lr = lr;
      double loss;
      try {
        loss = step_fn(batch, lo, epoch_rng, lr, rec);
      } catch (const NumericError& e) {
        if (files) {
          auto c = trainer.checkpoint();
          c.metadata["epoch"] = std::to_string(epoch - 1);
          c.metadata["global_step"] = std::to_string(global_step);
          c.metadata["diverged_at_step"] = std::to_string(global_step);
          save_checkpoint(c, ckpt_dir / "diverged.ckpt");
        }
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(global_step));
      }
      rec.loss = loss;
      if (hook) hook(rec);
      result.step_loss.push_back(loss);
      if (files) loss_csv << epoch << ',' << global_step << ',' << fmt(loss) << ',' << fmt(lr) << '\n';
      sum += loss;
      ++global_step;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(steps_per_epoch));
    result.last = trainer.checkpoint();
    result.last.metadata["epoch"] = std::to_string(epoch);
    result.last.metadata["global_step"] = std::to_string(global_step);
    result.last.metadata["epoch_loss"] = fmt(result.epoch_loss.back());
    if (files && cfg.save_checkpoints) {
      const auto path = ckpt_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(result.last, path);
      result.checkpoints.push_back(path);
    }
    loss_csv.flush();
  }

  if (files) {
    nlohmann::ordered_json run;
    run["objective"] = to_string(cfg.objective);
    run["loss"] = cfg.objective == Objective::kSimclr ? "nt_xent" : "masked_mse";
    run["epochs"] = cfg.epochs;
    run["batch_size"] = cfg.batch_size;
    run["devices"] = cfg.devices;
    run["seed"] = cfg.seed;
    run["augment"] = cfg.pipeline().name;
    run["config_hash"] = sha256_hex(cfg.config_text);
    run["patients"] = n;
    run["steps_per_epoch"] = steps_per_epoch;
    run["epoch_loss"] = result.epoch_loss;
    if (cfg.objective == Objective::kMae) run["mask_ratio"] = cfg.vit.mask_ratio;
    std::ofstream(cfg.output_dir / "run.json", std::ios::trunc) << run.dump(2) << '\n';
  }
  return result;
}

}  // namespace

PretrainResult pretrain_simclr(const TrainConfig& cfg_in, const DatasetManifest& m, const StepHook& hook) {
  TrainConfig cfg = cfg_in;
  cfg.objective = Objective::kSimclr;
  SimclrTrainer trainer(cfg);
  VolumeCache cache(m, cfg.input_shape());
  const AugmentSpec spec = cfg.pipeline();
  auto step = [&](std::span<const ScheduleEntry> batch, std::int64_t first, const Rng& epoch_rng, double lr,
                  StepRecord&) {
    std::vector<VolumeGrid> a, b;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& v = cache.get(batch[i].patient_id, batch[i].scan_id);
      auto pair = make_view_pair(v, spec, epoch_rng.substream(static_cast<std::uint64_t>(first) + i), batch[i].scan_id);
      a.push_back(std::move(pair.view_a));
      b.push_back(std::move(pair.view_b));
    }
    return trainer.step(a, b, lr);
  };
  return run_pretraining(cfg, m, trainer, 2, step, hook);
}

PretrainResult pretrain_mae(const TrainConfig& cfg_in, const DatasetManifest& m, const StepHook& hook) {
  TrainConfig cfg = cfg_in;
  cfg.objective = Objective::kMae;
  MaeTrainer trainer(cfg);
  VolumeCache cache(m, cfg.input_shape());
  const AugmentSpec spec = cfg.pipeline();
  const auto patches = cfg.vit.layout().num_patches();
  std::vector<MaskSet> masks;
  auto step = [&](std::span<const ScheduleEntry> batch, std::int64_t first, const Rng& epoch_rng, double lr,
                  StepRecord& rec) {
    std::vector<VolumeGrid> x;
    masks.clear();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Rng r = epoch_rng.substream(static_cast<std::uint64_t>(first) + i);
      x.push_back(apply(spec, cache.get(batch[i].patient_id, batch[i].scan_id), r.substream("view")));
      Rng mr = r.substream("mask");
      masks.push_back(sample_mask(patches, cfg.vit.mask_ratio, mr));
    }
    rec.masks = &masks;
    return trainer.step(x, masks, lr);
  };
  return run_pretraining(cfg, m, trainer, 1, step, hook);
}

}  // namespace brainssl
