#include <cmath>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "brainssl/error.hpp"
#include "brainssl/synthgen.hpp"
#include "brainssl/train.hpp"
#include "test_util.hpp"

using namespace brainssl;

namespace {

TrainConfig desk_simclr(std::uint64_t seed) {
  TrainConfig t;
  t.objective = Objective::kSimclr;
  t.architecture = "resnet18_3d";
  t.epochs = 5;
  t.batch_size = 8;
  t.seed = seed;
  t.optim.lr = 3e-3;
  t.augment = "simclr";
  t.encoder.widths = {4, 8, 8, 16};
  t.encoder.input_shape = {32, 32, 32};
  t.encoder.projection_hidden = 16;
  t.encoder.projection_dim = 8;
  t.vit.input_shape = t.encoder.input_shape;
  return t;
}

TrainConfig desk_mae(std::uint64_t seed) {
  TrainConfig t = desk_simclr(seed);
  t.objective = Objective::kMae;
  t.architecture = "vit_tiny";
  t.augment = "mae_pretrain";
  t.vit.patch = {8, 8, 8};
  t.vit.embed_dim = 24;
  t.vit.depth = 2;
  t.vit.heads = 2;
  t.vit.decoder_embed_dim = 12;
  t.vit.decoder_depth = 1;
  t.vit.decoder_heads = 2;
  return t;
}

EvalConfig quick_eval(std::uint64_t seed = 0) {
  EvalConfig e;
  e.seed = seed;
  e.probe.epochs = 20;
  e.finetune.epochs = 2;
  e.supervised.epochs = 2;
  return e;
}

class Desk : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("desk");
    SynthDatasetOptions opt;
    opt.patients = 64;
    opt.scans_per_patient = {1, 2};
    opt.seed = 11;
    manifest_ = new DatasetManifest(load_manifest(generate_dataset(opt, dir_->path() / "data")));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static const DatasetManifest& data() { return *manifest_; }
  static std::filesystem::path out(const std::string& name) { return dir_->path() / name; }

 private:
  static inline testutil::TempDir* dir_ = nullptr;
  static inline DatasetManifest* manifest_ = nullptr;
};

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  OptimConfig o;
  o.lr = 0.1;
  o.warmup_epochs = 2;
  const std::int64_t spe = 5;
  const int epochs = 10;
  for (std::int64_t s = 0; s < 10; ++s) EXPECT_NEAR(o.lr_at(s, spe, epochs), 0.1 * (s + 1) / 10.0, 1e-15);
  for (std::int64_t s = 10; s < 50; ++s) {
    const double p = (s - 10) / 40.0;
    EXPECT_NEAR(o.lr_at(s, spe, epochs), 0.05 * (1 + std::cos(M_PI * p)), 1e-15);
  }
  o.schedule = "constant";
  EXPECT_DOUBLE_EQ(o.lr_at(30, spe, epochs), 0.1);
  o.schedule = "step";
  EXPECT_THROW(o.validate(), InvalidArgument);
}

TEST(TrainConfigCheck, Invariants) {
  auto t = desk_simclr(0);
  EXPECT_NO_THROW(t.validate());
  t.epochs = 0;
  EXPECT_THROW(t.validate(), InvalidArgument);
  t = desk_simclr(0);
  t.batch_size = 1;
  EXPECT_THROW(t.validate(), InvalidArgument);
  t = desk_simclr(0);
  t.devices = 9;
  EXPECT_THROW(t.validate(), InvalidArgument);
  EXPECT_NO_THROW(desk_mae(0).validate());
  EXPECT_EQ(TrainConfig{}.batch_size, 72);
  EXPECT_EQ(TrainConfig{}.epochs, 150);
}

TEST(TaskRouting, MetricFollowsKind) {
  for (const char* name : {"synthetic-asymmetry", "sex", "ad"}) EXPECT_EQ(DownstreamTask::named(name).metric(), "auc");
  for (const char* name : {"synthetic-size", "age", "synthetic-lesions", "stroke-scale"})
    EXPECT_EQ(DownstreamTask::named(name).metric(), "mean_abs_err");
  EXPECT_THROW(DownstreamTask::named("iq"), InvalidArgument);
  const auto s = DownstreamTask::named("stroke-scale");
  EXPECT_EQ(s.clamp->second, 42.0);
}

TEST(EvalCaps, DownstreamEpochLimits) {
  EvalConfig e;
  EXPECT_EQ(e.probe.epochs, 100);
  EXPECT_EQ(e.finetune.epochs, 100);
  EXPECT_EQ(e.supervised.epochs, 300);
  EXPECT_NO_THROW(e.validate());
  e.finetune.epochs = 101;
  EXPECT_THROW(e.validate(), InvalidArgument);
  e = EvalConfig{};
  e.probe.epochs = 150;
  EXPECT_THROW(e.validate(), InvalidArgument);
}

TEST_F(Desk, SimclrRunEmitsCheckpointsAndLogs) {
  auto t = desk_simclr(0);
  t.output_dir = out("simclr0");
  const auto r = pretrain_simclr(t, data());
  ASSERT_EQ(r.checkpoints.size(), 5u);
  for (int e = 1; e <= 5; ++e) {
    const auto c = load_checkpoint(t.output_dir / "checkpoints" / ("epoch_" + std::to_string(e) + ".ckpt"));
    EXPECT_EQ(c.kind, "simclr");
    EXPECT_EQ(c.meta("epoch"), std::to_string(e));
  }
  std::ifstream in(t.output_dir / "run.json");
  const auto run = nlohmann::json::parse(in);
  EXPECT_EQ(run["loss"], "nt_xent");
  EXPECT_EQ(run["epoch_loss"].size(), 5u);
  EXPECT_EQ(r.epoch_loss.size(), 5u);
  for (double l : r.step_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST_F(Desk, SimclrLossDecreases) {
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = pretrain_simclr(desk_simclr(seed), data());
    decreasing += r.epoch_loss.back() < r.epoch_loss.front();
  }
  EXPECT_GE(decreasing, 4);
}

TEST_F(Desk, MaeMasksEveryStepAtConfiguredRatio) {
  auto t = desk_mae(0);
  int steps = 0;
  const auto r = pretrain_mae(t, data(), [&](const StepRecord& rec) {
    ASSERT_NE(rec.masks, nullptr);
    for (const auto& m : *rec.masks) {
      EXPECT_EQ(m.ratio, 0.75);
      EXPECT_EQ(m.masked.size(), 48u);
      EXPECT_EQ(m.visible.size(), 16u);
    }
    ++steps;
  });
  EXPECT_EQ(steps, static_cast<int>(r.step_loss.size()));
  EXPECT_GT(steps, 0);
}

TEST_F(Desk, MaeLossDecreases) {
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = pretrain_mae(desk_mae(seed), data());
    decreasing += r.epoch_loss.back() < r.epoch_loss.front();
  }
  EXPECT_GE(decreasing, 4);
}

TEST_F(Desk, ResumeReproducesNextSteps) {
  for (auto make : {desk_simclr, desk_mae}) {
    auto t = make(3);
    t.epochs = 3;
    t.output_dir = out(std::string("resume_") + std::string(to_string(t.objective)));
    const auto full = t.objective == Objective::kMae ? pretrain_mae(t, data()) : pretrain_simclr(t, data());
    auto again = t;
    again.resume = t.output_dir / "checkpoints" / "epoch_2.ckpt";
    again.output_dir = t.output_dir.string() + "_b";
    const auto tail = t.objective == Objective::kMae ? pretrain_mae(again, data()) : pretrain_simclr(again, data());
    const std::size_t per_epoch = full.step_loss.size() / 3;
    ASSERT_EQ(tail.step_loss.size(), per_epoch);
    for (std::size_t i = 0; i < per_epoch; ++i) EXPECT_EQ(tail.step_loss[i], full.step_loss[2 * per_epoch + i]);
  }
}

TEST_F(Desk, RunsAreDeterministic) {
  const auto a = pretrain_simclr(desk_simclr(7), data());
  const auto b = pretrain_simclr(desk_simclr(7), data());
  EXPECT_EQ(a.step_loss, b.step_loss);
  const auto c = pretrain_simclr(desk_simclr(8), data());
  EXPECT_NE(a.step_loss, c.step_loss);
}

TEST_F(Desk, ProbeKeepsEncoderFrozen) {
  const auto ckpt = initial_checkpoint(desk_simclr(0));
  const auto r = linear_probe(ckpt, data(), DownstreamTask::named("synthetic-asymmetry"), quick_eval());
  EXPECT_EQ(r.metadata.at("encoder_checksum_before"), r.metadata.at("encoder_checksum_after"));
  EXPECT_EQ(r.metadata.at("augment"), "none");
  EXPECT_EQ(r.metric, "auc");
  EXPECT_EQ(r.mode, EvalMode::kLinearProbe);
  EXPECT_EQ(r.model, "ResNet-18 random init");
  ASSERT_EQ(r.values.size(), 1u);
  EXPECT_GE(r.values[0], 0.0);
  EXPECT_LE(r.values[0], 1.0);

  const auto again = linear_probe(ckpt, data(), DownstreamTask::named("synthetic-asymmetry"), quick_eval());
  EXPECT_EQ(again.values, r.values);
}

TEST_F(Desk, RegressionTasksReportMeanAbsoluteError) {
  const auto ckpt = initial_checkpoint(desk_mae(0));
  const auto r = linear_probe(ckpt, data(), DownstreamTask::named("synthetic-size"), quick_eval());
  EXPECT_EQ(r.metric, "mean_abs_err");
  EXPECT_GE(r.values[0], 0.0);
  EXPECT_LT(r.values[0], 40.0);
  EXPECT_EQ(r.model, "ViT-T random init");
}

TEST_F(Desk, ZeroRateFineTuneMatchesUntrainedProbe) {
  for (auto make : {desk_simclr, desk_mae}) {
    const auto ckpt = initial_checkpoint(make(1));
    auto e = quick_eval(2);
    e.finetune.optim.lr = 0.0;
    e.probe.epochs = 0;
    const auto task = DownstreamTask::named("synthetic-asymmetry");
    const auto ft = finetune(ckpt, data(), task, e);
    const auto lp = linear_probe(ckpt, data(), task, e);
    EXPECT_NEAR(ft.values[0], lp.values[0], 1e-9);
    EXPECT_NEAR(ft.val_values[0], lp.val_values[0], 1e-9);
    EXPECT_EQ(ft.metadata.at("encoder_checksum_before"), ft.metadata.at("encoder_checksum_after"));
  }
}

TEST_F(Desk, FineTuneAugmentationDependsOnObjective) {
  auto e = quick_eval();
  e.finetune.epochs = 1;
  const auto task = DownstreamTask::named("synthetic-asymmetry");
  const auto s = finetune(initial_checkpoint(desk_simclr(0)), data(), task, e);
  const auto m = finetune(initial_checkpoint(desk_mae(0)), data(), task, e);
  EXPECT_EQ(s.metadata.at("augment"), "none");
  EXPECT_EQ(m.metadata.at("augment"), "supervised");
  EXPECT_EQ(s.metadata.at("epochs"), "1");
  EXPECT_NE(s.metadata.at("encoder_checksum_before"), s.metadata.at("encoder_checksum_after"));
}

TEST_F(Desk, SupervisedBuildsBothArchitectures) {
  auto e = quick_eval(4);
  e.supervised.epochs = 1;
  const auto task = DownstreamTask::named("synthetic-asymmetry");
  const auto res = train_supervised(desk_simclr(0), data(), task, e);
  const auto vit = train_supervised(desk_mae(0), data(), task, e);
  EXPECT_EQ(res.model, "ResNet-18");
  EXPECT_EQ(vit.model, "ViT-T");
  EXPECT_EQ(res.mode, EvalMode::kSupervised);
  EXPECT_EQ(res.metadata.at("augment"), "supervised");
  const auto again = train_supervised(desk_simclr(0), data(), task, e);
  EXPECT_EQ(again.values, res.values);
}

TEST_F(Desk, FractionSweepLadder) {
  const auto ckpt = initial_checkpoint(desk_simclr(0));
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto rows = fraction_sweep(ckpt, data(), DownstreamTask::named("synthetic-asymmetry"), EvalMode::kLinearProbe,
                                   quick_eval(), seeds);
  ASSERT_EQ(rows.size(), 10u);
  const std::vector<double> ladder{0.2, 0.4, 0.6, 0.8, 1.0};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].seed, seeds[i / 5]);
    EXPECT_DOUBLE_EQ(rows[i].fraction, ladder[i % 5]);
    EXPECT_EQ(rows[i].metric, "auc");
  }
  EXPECT_THROW(fraction_sweep(ckpt, data(), DownstreamTask::named("synthetic-asymmetry"), EvalMode::kSupervised,
                              quick_eval(), seeds),
               InvalidArgument);
}

TEST_F(Desk, MissingLabelsRejected) {
  auto m = data();
  m.patients[0].labels.sex.reset();
  const auto ckpt = initial_checkpoint(desk_simclr(0));
  EXPECT_THROW(linear_probe(ckpt, m, DownstreamTask::named("synthetic-asymmetry"), quick_eval()), Error);
}
