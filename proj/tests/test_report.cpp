#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "brainssl/checkpoint.hpp"
#include "brainssl/config.hpp"
#include "brainssl/error.hpp"
#include "brainssl/report.hpp"
#include "test_util.hpp"

using namespace brainssl;

namespace {

EvalReport run(std::string task, std::string model, EvalMode mode, std::uint64_t seed, double v,
               std::string metric = "auc") {
  EvalReport r;
  r.task = std::move(task);
  r.model = std::move(model);
  r.mode = mode;
  r.metric = std::move(metric);
  r.seeds = {seed};
  r.values = {v};
  r.val_values = {v};
  r.mean = v;
  r.config_hash = "h";
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Aggregate, IdenticalValues) {
  std::vector<EvalReport> rs;
  for (std::uint64_t s = 0; s < 5; ++s) rs.push_back(run("t", "m", EvalMode::kLinearProbe, s, 0.8));
  const auto a = aggregate_runs(rs);
  EXPECT_DOUBLE_EQ(a.mean, 0.8);
  ASSERT_TRUE(a.std.has_value());
  EXPECT_DOUBLE_EQ(*a.std, 0.0);
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Aggregate, SampleStandardDeviation) {
  std::vector<EvalReport> rs;
  for (int v : {1, 2, 3}) rs.push_back(run("t", "m", EvalMode::kFineTune, v, v));
  const auto a = aggregate_runs(rs);
  EXPECT_DOUBLE_EQ(a.mean, 2.0);
  EXPECT_DOUBLE_EQ(*a.std, 1.0);
  EXPECT_GE(a.mean, 1.0);
  EXPECT_LE(a.mean, 3.0);
}

TEST(Aggregate, SingleRunHasNoStd) {
  const auto a = aggregate_runs({run("t", "m", EvalMode::kSupervised, 0, 0.7)});
  EXPECT_FALSE(a.std.has_value());
}

TEST(Aggregate, RefusesMixedRuns) {
  EXPECT_THROW(aggregate_runs({}), InvalidArgument);
  EXPECT_THROW(aggregate_runs({run("a", "m", EvalMode::kLinearProbe, 0, 1), run("b", "m", EvalMode::kLinearProbe, 1, 1)}),
               InvalidArgument);
  EXPECT_THROW(aggregate_runs({run("a", "m", EvalMode::kLinearProbe, 0, 1), run("a", "m", EvalMode::kFineTune, 1, 1)}),
               InvalidArgument);
  auto other = run("a", "m", EvalMode::kLinearProbe, 1, 1);
  other.config_hash = "g";
  const std::vector<EvalReport> mixed{run("a", "m", EvalMode::kLinearProbe, 0, 1), other};
  EXPECT_THROW(aggregate_runs(mixed), InvalidArgument);
  EXPECT_EQ(aggregate_runs(mixed, true).config_hash, "mixed");
}

TEST(ReportIo, JsonlRoundTripWithoutRuntime) {
  testutil::TempDir dir("report");
  auto r = aggregate_runs({run("age", "MAE", EvalMode::kFineTune, 0, 7.25, "mean_abs_err"),
                           run("age", "MAE", EvalMode::kFineTune, 1, 8.5, "mean_abs_err")});
  r.runtime_seconds = 12.5;
  r.metadata["epochs"] = "100";
  append_report(r, dir / "r.jsonl");
  append_report(r, dir / "r.jsonl");
  EXPECT_EQ(slurp(dir / "r.jsonl").find("runtime"), std::string::npos);
  const auto back = read_reports(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].values, r.values);
  EXPECT_EQ(back[0].seeds, r.seeds);
  EXPECT_EQ(back[0].mode, EvalMode::kFineTune);
  EXPECT_DOUBLE_EQ(*back[0].std, *r.std);
  EXPECT_EQ(back[0].metadata, r.metadata);

  append_timing(r, dir / "t.jsonl");
  EXPECT_NE(slurp(dir / "t.jsonl").find("12.5"), std::string::npos);
}

TEST(ReportIo, MalformedLineIsFormatError) {
  testutil::TempDir dir("report");
  std::ofstream(dir / "bad.jsonl") << "{\"task\": 1}\n";
  EXPECT_THROW(read_reports(dir / "bad.jsonl"), FormatError);
  EXPECT_THROW(read_reports(dir / "missing.jsonl"), IoError);
}

TEST(Table, GridWithModeSuffixes) {
  std::vector<EvalReport> rs{
      run("sex", "SimCLR", EvalMode::kLinearProbe, 0, 0.80), run("sex", "SimCLR", EvalMode::kLinearProbe, 1, 0.90),
      run("sex", "SimCLR", EvalMode::kFineTune, 0, 0.91), run("age", "ResNet-18", EvalMode::kSupervised, 0, 6.0, "mean_abs_err")};
  const auto t = render_table(rs);
  EXPECT_NE(t.find("SimCLR (LP)"), std::string::npos);
  EXPECT_NE(t.find("SimCLR (FT)"), std::string::npos);
  EXPECT_NE(t.find("| ResNet-18 "), std::string::npos);
  EXPECT_EQ(t.find("ResNet-18 ("), std::string::npos);
  EXPECT_NE(t.find("0.850 ± 0.071"), std::string::npos);
  EXPECT_NE(t.find("6.00"), std::string::npos);
  EXPECT_NE(t.find("sex (AUC ↑)"), std::string::npos);
  EXPECT_NE(t.find("age (MAE ↓)"), std::string::npos);
  EXPECT_THROW(render_table({}), InvalidArgument);
}

TEST(Sweep, CsvRoundTripAndSvg) {
  testutil::TempDir dir("report");
  std::vector<SweepRow> rows;
  for (std::uint64_t s = 0; s < 2; ++s)
    for (double f : {0.2, 0.4, 0.6, 0.8, 1.0}) rows.push_back({"synthetic-asymmetry", f, "auc", 0.5 + f / 4, s});
  write_sweep_csv(rows, dir / "sweep.csv");
  EXPECT_EQ(slurp(dir / "sweep.csv").substr(0, 32), "task,fraction,metric,value,seed\n");
  const auto back = read_sweep_csv(dir / "sweep.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].task, rows[i].task);
    EXPECT_DOUBLE_EQ(back[i].fraction, rows[i].fraction);
    EXPECT_DOUBLE_EQ(back[i].value, rows[i].value);
    EXPECT_EQ(back[i].seed, rows[i].seed);
  }
  const auto svg = render_sweep_svg(rows);
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0, true);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Hash, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CheckpointIo, RoundTrip) {
  testutil::TempDir dir("ckpt");
  torch::manual_seed(3);
  Checkpoint c;
  c.kind = "simclr";
  c.config_text = "[train]\nepochs = 5\n";
  c.metadata = {{"epoch", "4"}, {"loss", "3.25"}};
  c.tensors = {{"a", torch::randn({3, 4})}, {"b", torch::arange(6, torch::kLong)}, {"c", torch::randn({2}, torch::kDouble)}};
  save_checkpoint(c, dir / "x.ckpt");
  const auto back = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.config_text, c.config_text);
  EXPECT_EQ(back.metadata, c.metadata);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.dtype(), c.tensors[i].second.dtype());
    EXPECT_TRUE(torch::equal(back.tensors[i].second, c.tensors[i].second));
  }
  EXPECT_EQ(back.meta("epoch"), "4");
  EXPECT_THROW(back.meta("absent"), FormatError);
  EXPECT_EQ(back.find("zzz"), nullptr);
}

TEST(CheckpointIo, CorruptFilesRejected) {
  testutil::TempDir dir("ckpt");
  std::ofstream(dir / "junk.ckpt") << "NOTACKPT and more";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), IoError);

  Checkpoint c;
  c.kind = "mae";
  c.tensors = {{"w", torch::randn({64})}};
  save_checkpoint(c, dir / "ok.ckpt");
  const auto size = std::filesystem::file_size(dir / "ok.ckpt");
  std::filesystem::resize_file(dir / "ok.ckpt", size - 16);
  EXPECT_THROW(load_checkpoint(dir / "ok.ckpt"), FormatError);
}

TEST(CheckpointIo, ModuleStateAndChecksum) {
  torch::manual_seed(1);
  torch::nn::Sequential a(torch::nn::Linear(4, 3), torch::nn::BatchNorm1d(3));
  torch::manual_seed(2);
  torch::nn::Sequential b(torch::nn::Linear(4, 3), torch::nn::BatchNorm1d(3));
  EXPECT_NE(state_checksum(*a), state_checksum(*b));
  Checkpoint c;
  add_module_state(c, *a, "enc.");
  load_module_state(c, *b, "enc.");
  EXPECT_EQ(state_checksum(*a), state_checksum(*b));

  torch::nn::Sequential wrong(torch::nn::Linear(5, 3), torch::nn::BatchNorm1d(3));
  EXPECT_THROW(load_module_state(c, *wrong, "enc."), FormatError);
}

TEST(Config, ParsesAndHashesOrderIndependently) {
  const std::string a = "[data]\nmanifest = m.jsonl\n[train]\nepochs = 5\nbatch_size = 8\nseed = 1\n";
  const std::string b = "[train]\nseed = 1\nbatch_size = 8\nepochs = 5\n[data]\nmanifest = m.jsonl\n";
  const auto ca = RunConfig::parse(a), cb = RunConfig::parse(b);
  EXPECT_EQ(ca.canonical(), cb.canonical());
  EXPECT_EQ(ca.hash(), cb.hash());
  EXPECT_EQ(ca.hash().size(), 64u);
  const auto cc = RunConfig::parse("[train]\nseed = 2\nbatch_size = 8\nepochs = 5\n[data]\nmanifest = m.jsonl\n");
  EXPECT_NE(ca.hash(), cc.hash());

  const auto t = ca.train_config(Objective::kSimclr);
  EXPECT_EQ(t.epochs, 5);
  EXPECT_EQ(t.batch_size, 8);
  EXPECT_EQ(t.seed, 1u);
  EXPECT_EQ(t.augment, "simclr");
  auto vit = RunConfig::parse(a + "[model]\narchitecture = vit_tiny\ninput_shape = 32\npatch = 8\n");
  EXPECT_EQ(vit.train_config(Objective::kMae).augment, "mae_pretrain");
  EXPECT_EQ(ca.seeds(), (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Config, DownstreamDefaults) {
  const auto e = RunConfig::parse("").eval_config();
  EXPECT_EQ(e.probe.epochs, 100);
  EXPECT_EQ(e.finetune.epochs, 100);
  EXPECT_EQ(e.supervised.epochs, 300);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::parse("[train]\nepoch = 5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[nosuch]\nx = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[train]\nepochs = five\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[train]\nprecision = float16\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\narchitecture = vgg\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[eval]\ntask = nothing\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[eval]\nfinetune_epochs = 150\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[augment]\ntransform_0 = spin p=1\n"), ConfigError);
}

TEST(Config, RequiredKeysAndPaths) {
  testutil::TempDir dir("config");
  std::ofstream(dir / "m.jsonl") << "";
  std::ofstream(dir / "run.ini") << "[data]\nmanifest = m.jsonl\n[output]\ndir = out\n";
  const auto c = RunConfig::load(dir / "run.ini");
  EXPECT_THROW(c.require(RunConfig::pretrain_required()), ConfigError);
  EXPECT_EQ(std::filesystem::weakly_canonical(c.manifest_path()), std::filesystem::weakly_canonical(dir / "m.jsonl"));
  ::unsetenv("BRAINSSL_OUTPUT_ROOT");
  EXPECT_EQ(c.output_dir(), std::filesystem::absolute(dir.path()) / "out");
  ::setenv("BRAINSSL_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  EXPECT_EQ(c.output_dir(), std::filesystem::path("/tmp/elsewhere/out"));
  ::unsetenv("BRAINSSL_OUTPUT_ROOT");
  EXPECT_THROW(RunConfig::parse("[data]\nmanifest = nope.jsonl\n", dir.path()).manifest_path(), ConfigError);
}

TEST(Config, ModelEntriesRoundTrip) {
  auto c = RunConfig::parse("[model]\narchitecture = vit_tiny\ninput_shape = 32\npatch = 8\nwidths = 4,8,8,16\nmask_ratio = 0.5\n");
  const auto t = c.train_config(Objective::kMae);
  TrainConfig u;
  apply_model_entries(model_entries(t), u);
  EXPECT_EQ(model_entries(u), model_entries(t));
  EXPECT_EQ(u.input_shape(), (Shape3{32, 32, 32}));
  EXPECT_DOUBLE_EQ(u.vit.mask_ratio, 0.5);
}
