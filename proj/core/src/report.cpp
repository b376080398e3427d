#include "brainssl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"

namespace brainssl {

std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kLinearProbe: return "LP";
    case EvalMode::kFineTune: return "FT";
    case EvalMode::kSupervised: return "supervised";
  }
  return "?";
}

EvalMode parse_eval_mode(std::string_view s) {
  if (s == "LP" || s == "lp") return EvalMode::kLinearProbe;
  if (s == "FT" || s == "ft") return EvalMode::kFineTune;
  if (s == "supervised") return EvalMode::kSupervised;
  throw InvalidArgument("unknown evaluation mode '" + std::string(s) + "'");
}

EvalReport aggregate_runs(const std::vector<EvalReport>& reports, bool force) {
  if (reports.empty()) throw InvalidArgument("no reports to aggregate");
  const auto& first = reports.front();
  EvalReport out;
  out.task = first.task;
  out.model = first.model;
  out.mode = first.mode;
  out.metric = first.metric;
  out.config_hash = first.config_hash;
  out.metadata = first.metadata;
  for (const auto& r : reports) {
    if (r.task != first.task || r.model != first.model || r.mode != first.mode || r.metric != first.metric) {
      throw InvalidArgument("cannot aggregate " + r.model + "/" + r.task + " with " + first.model + "/" + first.task);
    }
    if (r.config_hash != first.config_hash && !force) {
      throw InvalidArgument("reports for " + r.task + " come from different configurations");
    }
    if (r.values.size() != r.seeds.size()) throw InvalidArgument("report has mismatched seeds and values");
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    out.values.insert(out.values.end(), r.values.begin(), r.values.end());
    out.val_values.insert(out.val_values.end(), r.val_values.begin(), r.val_values.end());
    out.runtime_seconds += r.runtime_seconds;
  }
  if (out.config_hash != reports.back().config_hash) out.config_hash = "mixed";
  const auto ms = mean_std(out.values);
  out.mean = ms.mean;
  out.std = ms.std;
  return out;
}

namespace {

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["model"] = r.model;
  j["mode"] = to_string(r.mode);
  j["metric"] = r.metric;
  j["seeds"] = r.seeds;
  j["values"] = r.values;
  j["val_values"] = r.val_values;
  j["mean"] = r.mean;
  if (r.std) {
    j["std"] = *r.std;
  } else {
    j["std"] = nullptr;
  }
  j["config_hash"] = r.config_hash;
  j["metadata"] = r.metadata;
  return j;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << line << '\n';
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

void append_report(const EvalReport& r, const std::filesystem::path& jsonl) {
  append_line(jsonl, to_json(r).dump());
}

void append_timing(const EvalReport& r, const std::filesystem::path& jsonl) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["model"] = r.model;
  j["mode"] = to_string(r.mode);
  j["seeds"] = r.seeds;
  j["runtime_seconds"] = r.runtime_seconds;
  append_line(jsonl, j.dump());
}

std::vector<EvalReport> read_reports(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot open " + jsonl.string());
  std::vector<EvalReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalReport r;
      r.task = j.at("task").get<std::string>();
      r.model = j.at("model").get<std::string>();
      r.mode = parse_eval_mode(j.at("mode").get<std::string>());
      r.metric = j.at("metric").get<std::string>();
      r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      r.values = j.at("values").get<std::vector<double>>();
      r.val_values = j.value("val_values", std::vector<double>{});
      r.mean = j.at("mean").get<double>();
      if (!j.at("std").is_null()) r.std = j.at("std").get<double>();
      r.config_hash = j.at("config_hash").get<std::string>();
      r.metadata = j.value("metadata", std::map<std::string, std::string>{});
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string render_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InvalidArgument("no reports to render");
  // Group runs into cells, keeping first-seen order for rows and columns.
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, std::vector<EvalReport>> cells;
  std::map<std::string, std::string> col_metric;
  for (const auto& r : reports) {
    std::string row = r.model;
    if (r.mode != EvalMode::kSupervised) row += " (" + std::string(to_string(r.mode)) + ")";
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    if (std::find(cols.begin(), cols.end(), r.task) == cols.end()) cols.push_back(r.task);
    col_metric[r.task] = r.metric;
    cells[{row, r.task}].push_back(r);
  }

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Model"};
  for (const auto& c : cols) header.push_back(c + (col_metric[c] == "auc" ? " (AUC ↑)" : " (MAE ↓)"));
  grid.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row};
    for (const auto& c : cols) {
      const auto it = cells.find({row, c});
      if (it == cells.end()) {
        line.emplace_back("-");
        continue;
      }
      const auto agg = aggregate_runs(it->second, /*force=*/true);
      const int digits = agg.metric == "auc" ? 3 : 2;
      line.push_back(fixed(agg.mean, digits) + (agg.std ? " ± " + fixed(*agg.std, digits) : ""));
    }
    grid.push_back(line);
  }

  // Column widths in code points so the ± and arrows align.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) w[i] = std::max(w[i], width(line[i]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    out << "|";
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      out << ' ' << grid[r][i] << std::string(w[i] - width(grid[r][i]), ' ') << " |";
    }
    out << '\n';
    if (r == 0) {
      out << "|";
      for (auto wi : w) out << std::string(wi + 2, '-') << "|";
      out << '\n';
    }
  }
  return out.str();
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "task,fraction,metric,value,seed\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.task << ',' << fixed(r.fraction, 2) << ',' << r.metric << ',' << r.value << ',' << r.seed << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "task,fraction,metric,value,seed") throw FormatError(path.string() + ": unexpected CSV header");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError(path.string() + ": expected 5 columns in '" + line + "'");
    try {
      rows.push_back({f[0], std::stod(f[1]), f[2], std::stod(f[3]), std::stoull(f[4])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad number in '" + line + "'");
    }
  }
  return rows;
}

std::string render_sweep_svg(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw InvalidArgument("no sweep rows to plot");
  struct Stat {
    std::vector<double> v;
  };
  std::map<std::string, std::map<double, Stat>> series;
  std::vector<std::string> order;
  double lo = rows.front().value, hi = lo;
  for (const auto& r : rows) {
    if (!series.count(r.task)) order.push_back(r.task);
    series[r.task][r.fraction].v.push_back(r.value);
    lo = std::min(lo, r.value);
    hi = std::max(hi, r.value);
  }
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double W = 640, H = 400, L = 70, R = 170, T = 30, B = 50;
  auto px = [&](double f) { return L + f * (W - L - R); };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double f = k / 5.0;
    s << "<text x=\"" << px(f) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << static_cast<int>(f * 100)
      << "%</text>\n";
    const double v = lo + (hi - lo) * k / 5.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3) << v
      << std::setprecision(2) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">training data fraction</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\">" << rows.front().metric << "</text>\n";

  for (std::size_t i = 0; i < order.size(); ++i) {
    const char* c = colours[i % 6];
    std::string path;
    for (const auto& [f, st] : series[order[i]]) {
      const auto ms = mean_std(st.v);
      const auto [mn, mx] = std::minmax_element(st.v.begin(), st.v.end());
      std::ostringstream p;
      p << std::fixed << std::setprecision(2) << (path.empty() ? "M" : " L") << px(f) << ' ' << py(ms.mean);
      path += p.str();
      s << "<line x1=\"" << px(f) << "\" y1=\"" << py(*mn) << "\" x2=\"" << px(f) << "\" y2=\"" << py(*mx)
        << "\" stroke=\"" << c << "\"/>\n";
      s << "<circle cx=\"" << px(f) << "\" cy=\"" << py(ms.mean) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << c << "\">" << order[i]
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace brainssl
