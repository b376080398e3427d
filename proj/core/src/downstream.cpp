#include <chrono>
#include <cmath>

#include "brainssl/config.hpp"
#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"
#include "brainssl/train.hpp"

namespace brainssl {

std::optional<double> DownstreamTask::target(const PatientRecord& p) const {
  if (kind == TaskKind::kBinary) {
    const auto y = BinaryLabel{label_field, positive, negative}.of(p);
    return y ? std::optional<double>(*y) : std::nullopt;
  }
  if (label_field == "age") return p.labels.age;
  if (label_field == "stroke_scale") {
    return p.labels.stroke_scale ? std::optional<double>(*p.labels.stroke_scale) : std::nullopt;
  }
  throw InvalidArgument("'" + label_field + "' is not a regression label field");
}

std::optional<BinaryLabel> DownstreamTask::stratify() const {
  if (kind != TaskKind::kBinary) return std::nullopt;
  return BinaryLabel{label_field, positive, negative};
}

void DownstreamTask::validate() const {
  if (kind == TaskKind::kBinary && label_field != "sex" && label_field != "diagnosis") {
    throw InvalidArgument("classification tasks use the sex or diagnosis label");
  }
  if (kind == TaskKind::kRegression && label_field != "age" && label_field != "stroke_scale") {
    throw InvalidArgument("regression tasks use the age or stroke_scale label");
  }
  if (label_field == "diagnosis" && (positive.empty() || negative.empty() || positive == negative)) {
    throw InvalidArgument("diagnosis tasks need two distinct classes");
  }
}

DownstreamTask DownstreamTask::named(std::string_view name) {
  DownstreamTask t;
  t.name = std::string(name);
  if (name == "synthetic-asymmetry" || name == "sex") {
    t.kind = TaskKind::kBinary;
    t.label_field = "sex";
  } else if (name == "synthetic-size" || name == "age") {
    t.kind = TaskKind::kRegression;
    t.label_field = "age";
  } else if (name == "synthetic-lesions" || name == "stroke-scale") {
    t.kind = TaskKind::kRegression;
    t.label_field = "stroke_scale";
    t.clamp = std::pair<double, double>{0.0, kStrokeScaleMax};
  } else if (name == "ad") {
    t.kind = TaskKind::kBinary;
    t.label_field = "diagnosis";
    t.positive = "AD";
    t.negative = "CN";
  } else {
    throw InvalidArgument("unknown task '" + t.name + "'");
  }
  return t;
}

void EvalConfig::validate() const {
  if (probe.epochs < 0 || probe.epochs > kMaxDownstreamEpochs) {
    throw InvalidArgument("probe epochs must lie in [0, " + std::to_string(kMaxDownstreamEpochs) + "]");
  }
  if (finetune.epochs < 0 || finetune.epochs > kMaxDownstreamEpochs) {
    throw InvalidArgument("fine-tune epochs must lie in [0, " + std::to_string(kMaxDownstreamEpochs) + "]");
  }
  if (supervised.epochs < 1) throw InvalidArgument("supervised epochs must be > 0");
  for (const auto* h : {&probe, &finetune, &supervised}) {
    if (h->batch_size < 1) throw InvalidArgument("batch sizes must be > 0");
    h->optim.validate();
  }
}

namespace {

// Feature extractor over either encoder family.
struct Backbone {
  std::string arch;  // resnet18_3d or vit_tiny
  SimclrModel resnet{nullptr};
  MaeModel vit{nullptr};
  Shape3 shape{};

  torch::nn::Module& module() {
    return arch == "vit_tiny" ? static_cast<torch::nn::Module&>(*vit) : static_cast<torch::nn::Module&>(*resnet->encoder());
  }
  torch::Tensor features(const torch::Tensor& x) {
    return arch == "vit_tiny" ? vit->features(x) : resnet->encoder()->forward(x);
  }
};

Backbone fresh_backbone(const TrainConfig& cfg) {
  Backbone b;
  b.arch = cfg.architecture;
  b.shape = cfg.input_shape();
  if (b.arch == "vit_tiny") {
    b.vit = init_mae(cfg.vit, cfg.seed);
  } else {
    b.resnet = init_encoder(cfg.encoder, cfg.seed);
  }
  return b;
}

Backbone load_backbone(const Checkpoint& c) {
  if (c.kind != "simclr" && c.kind != "mae") throw InvalidArgument("unsupported checkpoint kind '" + c.kind + "'");
  TrainConfig cfg;
  try {
    apply_model_entries(c.metadata, cfg);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model description: ") + e.what());
  }
  cfg.architecture = c.kind == "mae" ? "vit_tiny" : "resnet18_3d";
  Backbone b = fresh_backbone(cfg);
  if (b.arch == "vit_tiny") {
    load_module_state(c, *b.vit, "model.");
  } else {
    load_module_state(c, *b.resnet, "model.");
  }
  return b;
}

struct Item {
  const PatientRecord* patient;
  double y;
};

std::vector<Item> labelled(const DatasetManifest& m, Split s, const DownstreamTask& task) {
  std::vector<Item> out;
  for (const auto* p : m.in_split(s)) {
    const auto y = task.target(*p);
    if (!y) {
      throw InvalidArgument("patient '" + p->patient_id + "' in " + std::string(to_string(s)) + " lacks the '" +
                            task.label_field + "' label for task " + task.name);
    }
    out.push_back({p, *y});
  }
  if (out.empty()) throw DegenerateInput(std::string(to_string(s)) + " split is empty");
  return out;
}

constexpr std::int64_t kFeatureBatch = 16;

torch::Tensor extract(Backbone& b, VolumeCache& cache, const std::vector<std::pair<std::string, std::string>>& scans) {
  torch::NoGradGuard g;
  b.module().eval();
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < scans.size(); i += kFeatureBatch) {
    std::vector<VolumeGrid> vols;
    for (std::size_t j = i; j < std::min(scans.size(), i + kFeatureBatch); ++j) {
      vols.push_back(cache.get(scans[j].first, scans[j].second));
    }
    parts.push_back(b.features(stack_volumes(vols, torch::kFloat32)));
  }
  auto f = torch::cat(parts);
  require_finite(f, "encoder features");
  return f;
}

std::vector<std::pair<std::string, std::string>> first_scans(const std::vector<Item>& items) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& it : items) out.emplace_back(it.patient->patient_id, it.patient->scans.front().scan_id);
  return out;
}

std::vector<std::pair<std::string, std::string>> all_scans(const std::vector<Item>& items) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& it : items) {
    for (const auto& s : it.patient->scans) out.emplace_back(it.patient->patient_id, s.scan_id);
  }
  return out;
}

// Standardisation followed by one linear unit.
struct Head {
  torch::Tensor mean, inv_std;
  torch::nn::Linear fc{nullptr};

  torch::Tensor forward(const torch::Tensor& f) { return fc->forward((f - mean) * inv_std).squeeze(1); }
};

Head make_head(std::int64_t dim, const torch::Tensor& train_features, bool standardise, double bias,
               std::uint64_t seed) {
  Head h;
  if (standardise) {
    h.mean = train_features.mean(0);
    auto sd = train_features.std(0, /*unbiased=*/false);
    h.inv_std = 1.0 / torch::where(sd > 1e-6, sd, torch::ones_like(sd));
  } else {
    h.mean = torch::zeros({dim});
    h.inv_std = torch::ones({dim});
  }
  h.fc = torch::nn::Linear(dim, 1);
  Rng r = Rng(seed).substream("head");
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<float> w(static_cast<std::size_t>(dim));
  for (auto& x : w) x = static_cast<float>(r.uniform(-bound, bound));
  torch::NoGradGuard g;
  h.fc->weight.copy_(torch::from_blob(w.data(), {1, dim}, torch::kFloat32));
  h.fc->bias.fill_(bias);
  return h;
}

torch::Tensor head_loss(const DownstreamTask& task, const torch::Tensor& out, const torch::Tensor& y) {
  if (task.kind == TaskKind::kBinary) return torch::binary_cross_entropy_with_logits(out, y);
  return torch::mse_loss(out, y);
}

double score(const DownstreamTask& task, const torch::Tensor& out, const std::vector<Item>& items) {
  const auto o = out.to(torch::kFloat64).contiguous();
  std::vector<double> pred(o.data_ptr<double>(), o.data_ptr<double>() + o.numel());
  if (task.kind == TaskKind::kBinary) {
    std::vector<int> labels;
    for (const auto& it : items) labels.push_back(static_cast<int>(it.y));
    return auc(pred, labels);
  }
  std::vector<double> target;
  for (const auto& it : items) target.push_back(it.y);
  if (task.clamp) {
    for (auto& p : pred) p = std::clamp(p, task.clamp->first, task.clamp->second);
  }
  return mean_abs_err(pred, target);
}

double initial_bias(const DownstreamTask& task, const std::vector<Item>& train) {
  if (task.kind == TaskKind::kBinary) return 0.0;
  double s = 0.0;
  for (const auto& it : train) s += it.y;
  return s / static_cast<double>(train.size());
}

torch::Tensor targets(const std::vector<const Item*>& batch) {
  std::vector<float> y;
  for (const auto* it : batch) y.push_back(static_cast<float>(it->y));
  return torch::tensor(y);
}

struct Prepared {
  std::vector<Item> train, val, test;
  std::map<std::string, const Item*> by_patient;
};

Prepared prepare(const DatasetManifest& m, const DownstreamTask& task) {
  task.validate();
  Prepared p;
  p.train = labelled(m, Split::kTrain, task);
  p.val = labelled(m, Split::kVal, task);
  p.test = labelled(m, Split::kTest, task);
  for (const auto& it : p.train) p.by_patient[it.patient->patient_id] = &it;
  return p;
}

void finish(EvalReport& r, const EvalConfig& cfg, double val, double test,
            std::chrono::steady_clock::time_point t0) {
  r.seeds = {cfg.seed};
  r.values = {test};
  r.val_values = {val};
  r.mean = test;
  r.config_hash = cfg.config_hash;
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Trains encoder and head end to end; shared by fine-tuning and supervised training.
EvalReport train_end_to_end(Backbone b, const DatasetManifest& m, const DownstreamTask& task, const EvalConfig& cfg,
                            const HeadTraining& ht, const AugmentSpec& spec, bool frozen_stats, bool standardise,
                            EvalReport r) {
  const auto t0 = std::chrono::steady_clock::now();
  Prepared data = prepare(m, task);
  VolumeCache cache(m, b.shape);
  const auto train_f = extract(b, cache, all_scans(data.train));
  Head head = make_head(train_f.size(1), train_f, standardise, initial_bias(task, data.train), cfg.seed);
  r.metadata["encoder_checksum_before"] = state_checksum(b.module());

  std::vector<torch::Tensor> params = b.module().parameters();
  for (auto& p : head.fc->parameters()) params.push_back(p);
  auto opt = make_adamw(params, ht.optim);
  const auto n = static_cast<std::int64_t>(data.train.size());
  const std::int64_t steps_per_epoch = (n + ht.batch_size - 1) / ht.batch_size;
  const Rng root = Rng(cfg.seed).substream("end_to_end");
  std::int64_t global = 0;
  for (int epoch = 1; epoch <= ht.epochs; ++epoch) {
    const auto sched = epoch_schedule(m, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    const Rng er = root.substream(static_cast<std::uint64_t>(epoch));
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<VolumeGrid> vols;
      std::vector<const Item*> items;
      for (std::int64_t i = s * ht.batch_size; i < std::min<std::int64_t>(n, (s + 1) * ht.batch_size); ++i) {
        const auto& e = sched.entries[static_cast<std::size_t>(i)];
        vols.push_back(apply(spec, cache.get(e.patient_id, e.scan_id), er.substream(static_cast<std::uint64_t>(i))));
        items.push_back(data.by_patient.at(e.patient_id));
      }
      if (frozen_stats) {
        b.module().eval();
      } else {
        b.module().train();
      }
      const auto out = head.forward(b.features(stack_volumes(vols, torch::kFloat32)));
      auto loss = head_loss(task, out, targets(items));
      if (!std::isfinite(loss.item<double>())) throw NumericError("downstream loss is not finite");
      set_lr(*opt, ht.optim.lr_at(global++, steps_per_epoch, ht.epochs));
      opt->zero_grad();
      loss.backward();
      opt->step();
    }
  }

  torch::NoGradGuard g;
  const double val = score(task, head.forward(extract(b, cache, first_scans(data.val))), data.val);
  const double test = score(task, head.forward(extract(b, cache, first_scans(data.test))), data.test);
  r.metadata["encoder_checksum_after"] = state_checksum(b.module());
  r.metadata["epochs"] = std::to_string(ht.epochs);
  r.metadata["augment"] = spec.name;
  finish(r, cfg, val, test, t0);
  return r;
}

std::string arch_label(const std::string& arch) { return arch == "vit_tiny" ? "ViT-T" : "ResNet-18"; }

}  // namespace

std::string model_label(const Checkpoint& c) {
  const auto it = c.metadata.find("epoch");
  if (it != c.metadata.end() && it->second == "0") {
    return arch_label(c.kind == "mae" ? "vit_tiny" : "resnet18_3d") + " random init";
  }
  if (c.kind == "simclr") return "SimCLR";
  if (c.kind == "mae") return "MAE";
  return c.kind;
}

EvalReport linear_probe(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                        const EvalConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Backbone b = load_backbone(ckpt);
  Prepared data = prepare(m, task);
  VolumeCache cache(m, b.shape);

  EvalReport r;
  r.task = task.name;
  r.model = model_label(ckpt);
  r.mode = EvalMode::kLinearProbe;
  r.metric = task.metric();
  const auto before = state_checksum(b.module());

  const auto scans = all_scans(data.train);
  const auto feats = extract(b, cache, scans);
  std::map<std::string, std::int64_t> row;
  for (std::size_t i = 0; i < scans.size(); ++i) row[scans[i].second] = static_cast<std::int64_t>(i);
  Head head = make_head(feats.size(1), feats, true, initial_bias(task, data.train), cfg.seed);

  const auto& ht = cfg.probe;
  auto opt = make_adamw(head.fc->parameters(), ht.optim);
  const auto n = static_cast<std::int64_t>(data.train.size());
  const std::int64_t steps_per_epoch = (n + ht.batch_size - 1) / ht.batch_size;
  std::int64_t global = 0;
  for (int epoch = 1; epoch <= ht.epochs; ++epoch) {
    const auto sched = epoch_schedule(m, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::int64_t> rows;
      std::vector<const Item*> items;
      for (std::int64_t i = s * ht.batch_size; i < std::min<std::int64_t>(n, (s + 1) * ht.batch_size); ++i) {
        const auto& e = sched.entries[static_cast<std::size_t>(i)];
        rows.push_back(row.at(e.scan_id));
        items.push_back(data.by_patient.at(e.patient_id));
      }
      const auto out = head.forward(feats.index_select(0, torch::tensor(rows, torch::kLong)));
      auto loss = head_loss(task, out, targets(items));
      set_lr(*opt, ht.optim.lr_at(global++, steps_per_epoch, ht.epochs));
      opt->zero_grad();
      loss.backward();
      opt->step();
    }
  }

  torch::NoGradGuard g;
  const double val = score(task, head.forward(extract(b, cache, first_scans(data.val))), data.val);
  const double test = score(task, head.forward(extract(b, cache, first_scans(data.test))), data.test);
  const auto after = state_checksum(b.module());
  if (after != before) throw NumericError("encoder parameters changed during linear probing");
  r.metadata["encoder_checksum_before"] = before;
  r.metadata["encoder_checksum_after"] = after;
  r.metadata["epochs"] = std::to_string(ht.epochs);
  r.metadata["augment"] = "none";
  r.metadata["checkpoint_epoch"] = ckpt.metadata.count("epoch") ? ckpt.metadata.at("epoch") : "";
  finish(r, cfg, val, test, t0);
  return r;
}

EvalReport finetune(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                    const EvalConfig& cfg) {
  cfg.validate();
  Backbone b = load_backbone(ckpt);
  EvalReport r;
  r.task = task.name;
  r.model = model_label(ckpt);
  r.mode = EvalMode::kFineTune;
  r.metric = task.metric();
  r.metadata["checkpoint_epoch"] = ckpt.metadata.count("epoch") ? ckpt.metadata.at("epoch") : "";
  const AugmentSpec spec = build_pipeline(ckpt.kind == "mae" ? "supervised" : "none", b.shape);
  return train_end_to_end(std::move(b), m, task, cfg, cfg.finetune, spec, /*frozen_stats=*/true,
                          /*standardise=*/true, std::move(r));
}

EvalReport train_supervised(const TrainConfig& tc, const DatasetManifest& m, const DownstreamTask& task,
                            const EvalConfig& cfg) {
  cfg.validate();
  TrainConfig t = tc;
  t.objective = Objective::kSupervised;
  t.seed = cfg.seed;
  t.validate();
  Backbone b = fresh_backbone(t);
  EvalReport r;
  r.task = task.name;
  r.model = arch_label(t.architecture);
  r.mode = EvalMode::kSupervised;
  r.metric = task.metric();
  const AugmentSpec spec = build_pipeline("supervised", b.shape);
  return train_end_to_end(std::move(b), m, task, cfg, cfg.supervised, spec, /*frozen_stats=*/false,
                          /*standardise=*/false, std::move(r));
}

std::vector<SweepRow> fraction_sweep(const Checkpoint& ckpt, const DatasetManifest& m, const DownstreamTask& task,
                                     EvalMode mode, const EvalConfig& cfg, std::span<const std::uint64_t> seeds,
                                     std::span<const double> fractions) {
  if (mode == EvalMode::kSupervised) throw InvalidArgument("fraction sweeps run on LP or FT");
  std::vector<SweepRow> rows;
  for (auto seed : seeds) {
    EvalConfig c = cfg;
    c.seed = seed;
    for (double f : fractions) {
      const auto sub = restrict_train(m, fraction_subset(m, f, seed, task.stratify()));
      const auto r = mode == EvalMode::kLinearProbe ? linear_probe(ckpt, sub, task, c) : finetune(ckpt, sub, task, c);
      rows.push_back({task.name, f, r.metric, r.values.front(), seed});
    }
  }
  return rows;
}

}  // namespace brainssl
