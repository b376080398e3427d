#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace brainssl {

enum class EvalMode { kLinearProbe, kFineTune, kSupervised };
/// "LP", "FT" and "supervised".
std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(std::string_view s);  // also accepts "lp" and "ft"

/// Outcome of one or more evaluation runs of a model on a task.
struct EvalReport {
  std::string task;
  std::string model;   // row label, e.g. "SimCLR" or "ResNet-18"
  EvalMode mode = EvalMode::kLinearProbe;
  std::string metric;  // "auc" or "mean_abs_err"
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;      // test metric per seed
  std::vector<double> val_values;  // validation metric per seed
  double mean = 0.0;
  std::optional<double> std;       // absent for a single run
  double runtime_seconds = 0.0;    // kept out of the JSONL record
  std::string config_hash;
  std::map<std::string, std::string> metadata;
};

/// Mean and sample standard deviation over the per-seed values of reports
/// that share task, model, mode and metric. Reports with differing config
/// hashes are refused unless `force` is set. Throws InvalidArgument.
EvalReport aggregate_runs(const std::vector<EvalReport>& reports, bool force = false);

/// One JSON object per line; runtimes go to a separate timings file so the
/// record itself is a deterministic function of the run.
void append_report(const EvalReport& r, const std::filesystem::path& jsonl);
std::vector<EvalReport> read_reports(const std::filesystem::path& jsonl);
void append_timing(const EvalReport& r, const std::filesystem::path& jsonl);

/// Model x task grid with "mean ± std" cells. Rows are labelled
/// "<model> (<mode>)" for LP and FT runs.
std::string render_table(const std::vector<EvalReport>& reports);

struct SweepRow {
  std::string task;
  double fraction = 1.0;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

/// Columns task,fraction,metric,value,seed.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);
/// Metric against training fraction, one series per task (seed mean with
/// min/max whiskers), as a standalone SVG document.
std::string render_sweep_svg(const std::vector<SweepRow>& rows);

}  // namespace brainssl
