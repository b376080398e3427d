#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "brainssl/config.hpp"
#include "brainssl/error.hpp"
#include "brainssl/report.hpp"
#include "brainssl/synthgen.hpp"
#include "brainssl/train.hpp"

using namespace brainssl;
namespace fs = std::filesystem;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kValidationFailure = 2;

fs::path under_output_root(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("BRAINSSL_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

std::vector<double> parse_fractions(const std::string& text) {
  if (text == "default") return fraction_ladder();
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("--fractions: cannot read '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--fractions: empty list");
  return out;
}

std::string slug(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '-';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

struct SynthArgs {
  std::int64_t patients = 64;
  std::string dims = "32";
  std::uint64_t seed = 0;
  std::string out;
  int scans_min = 1, scans_max = 3;
  int max_lesions = 6;
};

int cmd_synth(const SynthArgs& a) {
  SynthDatasetOptions opt;
  opt.patients = a.patients;
  opt.dims = parse_shape("--dims", a.dims);
  opt.seed = a.seed;
  opt.scans_per_patient = {a.scans_min, a.scans_max};
  opt.max_lesions = a.max_lesions;
  std::cout << generate_dataset(opt, under_output_root(a.out)).string() << '\n';
  return 0;
}

struct PretrainArgs {
  std::string objective = "simclr";
  std::string config;
  std::string resume;
};

int cmd_pretrain(const PretrainArgs& a) {
  const auto rc = RunConfig::load(a.config);
  rc.require(RunConfig::pretrain_required());
  const Objective obj = parse_objective(a.objective);
  if (obj == Objective::kSupervised) throw ConfigError("--objective must be simclr or mae");
  TrainConfig t = rc.train_config(obj);
  t.output_dir = rc.output_dir();
  if (!a.resume.empty()) t.resume = a.resume;
  const auto m = load_manifest(rc.manifest_path());
  const auto r = obj == Objective::kSimclr ? pretrain_simclr(t, m) : pretrain_mae(t, m);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) std::cout << "epoch " << e + 1 << " loss " << r.epoch_loss[e] << '\n';
  std::cout << t.output_dir.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string mode;
  std::string task;
  std::string config;
  std::string checkpoint;
  std::string fractions;
  std::string out;
  bool timings = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto rc = RunConfig::load(a.config);
  const EvalMode mode = parse_eval_mode(a.mode);
  const DownstreamTask task = a.task.empty() ? rc.task() : DownstreamTask::named(a.task);
  const EvalConfig base = rc.eval_config();
  const auto seeds = rc.seeds();
  const auto m = load_manifest(rc.manifest_path());
  const fs::path out = a.out.empty() ? rc.output_dir() / "eval" : under_output_root(a.out);
  fs::create_directories(out);

  Checkpoint ckpt;
  if (mode != EvalMode::kSupervised) {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for --mode lp and ft");
    ckpt = load_checkpoint(a.checkpoint);
  }
  const std::string tag = std::string(to_string(mode)) + "_" + task.name;

  if (!a.fractions.empty()) {
    if (mode == EvalMode::kSupervised) throw ConfigError("--fractions applies to lp and ft");
    const auto fractions = parse_fractions(a.fractions);
    const auto rows = fraction_sweep(ckpt, m, task, mode, base, seeds, fractions);
    const auto csv = out / ("sweep_" + slug(tag) + ".csv");
    write_sweep_csv(rows, csv);
    std::ofstream(out / ("sweep_" + slug(tag) + ".svg"), std::ios::trunc) << render_sweep_svg(rows);
    for (const auto& r : rows) std::cout << r.task << " fraction " << r.fraction << " seed " << r.seed << ' ' << r.metric << ' ' << r.value << '\n';
    std::cout << csv.string() << '\n';
    return 0;
  }

  std::vector<EvalReport> reports;
  for (auto seed : seeds) {
    EvalConfig c = base;
    c.seed = seed;
    if (mode == EvalMode::kLinearProbe) {
      reports.push_back(linear_probe(ckpt, m, task, c));
    } else if (mode == EvalMode::kFineTune) {
      reports.push_back(finetune(ckpt, m, task, c));
    } else {
      reports.push_back(train_supervised(rc.train_config(Objective::kSupervised), m, task, c));
    }
    const auto& r = reports.back();
    std::cout << r.model << " (" << to_string(r.mode) << ") " << r.task << " seed " << seed << ' ' << r.metric << ' '
              << r.values.front() << '\n';
  }
  const auto file = out / (slug(reports.front().model + "_" + tag) + ".jsonl");
  fs::remove(file);
  for (const auto& r : reports) append_report(r, file);
  if (a.timings) {
    const auto tfile = out / "timings" / file.filename();
    fs::remove(tfile);
    for (const auto& r : reports) append_timing(r, tfile);
  }
  const auto agg = aggregate_runs(reports);
  std::cout << "mean " << agg.mean;
  if (agg.std) std::cout << " std " << *agg.std;
  std::cout << '\n' << file.string() << '\n';
  return 0;
}

struct ReportArgs {
  std::string in;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  const fs::path dir = under_output_root(a.in);
  if (!fs::is_directory(dir)) throw IoError("no such directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".jsonl") continue;
    if (e.path().parent_path().filename() == "timings") continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    for (auto& r : read_reports(f)) reports.push_back(std::move(r));
  }
  if (reports.empty()) throw DegenerateInput("no evaluation reports under " + dir.string());
  const auto table = render_table(reports);
  std::cout << table;
  if (!a.out.empty()) {
    const auto path = under_output_root(a.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::trunc) << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* t = std::getenv("BRAINSSL_THREADS"); t && *t) {
    const int n = std::atoi(t);
    if (n > 0) {
      torch::set_num_threads(n);
      torch::set_num_interop_threads(n);
    }
  }

  CLI::App app{"self-supervised pre-training and evaluation for 3D brain volumes"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and print its manifest path");
  synth->add_option("--patients", sa.patients)->check(CLI::PositiveNumber);
  synth->add_option("--dims", sa.dims, "one extent or D,H,W");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--scans-min", sa.scans_min);
  synth->add_option("--scans-max", sa.scans_max);
  synth->add_option("--max-lesions", sa.max_lesions);

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "run SimCLR or MAE pre-training");
  pretrain->add_option("--objective", pa.objective)->check(CLI::IsMember({"simclr", "mae"}));
  pretrain->add_option("--config", pa.config)->required();
  pretrain->add_option("--resume", pa.resume, "checkpoint to continue from");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "linear probe, fine-tune or supervised baseline");
  eval->add_option("--mode", ea.mode)->required()->check(CLI::IsMember({"lp", "ft", "supervised"}));
  eval->add_option("--task", ea.task, "defaults to eval.task");
  eval->add_option("--config", ea.config)->required();
  eval->add_option("--checkpoint", ea.checkpoint);
  eval->add_option("--fractions", ea.fractions, "'default' or a comma-separated list");
  eval->add_option("--out", ea.out, "defaults to <output.dir>/eval");
  eval->add_flag("--timings", ea.timings, "also write wall-clock runtimes");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "render the model x task table from evaluation reports");
  report->add_option("--in", ra.in)->required();
  report->add_option("--out", ra.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationFailure;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*pretrain) return cmd_pretrain(pa);
    if (*eval) return cmd_eval(ea);
    if (*report) return cmd_report(ra);
  } catch (const ConfigError& e) {
    std::cerr << "brainssl: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::exception& e) {
    std::cerr << "brainssl: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
