#include "brainssl/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "brainssl/error.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kPretrainOnly: return "pretrain-only";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "pretrain-only") return Split::kPretrainOnly;
  throw InvalidArgument("unknown split value '" + std::string(s) + "'");
}

const PatientRecord* DatasetManifest::find(std::string_view patient_id) const {
  for (const auto& p : patients) {
    if (p.patient_id == patient_id) return &p;
  }
  return nullptr;
}

std::optional<Split> DatasetManifest::split_of(std::string_view patient_id) const {
  auto it = split.find(std::string(patient_id));
  if (it == split.end()) return std::nullopt;
  return it->second;
}

std::vector<const PatientRecord*> DatasetManifest::in_split(Split s) const {
  std::vector<const PatientRecord*> out;
  for (const auto& p : patients) {
    auto it = split.find(p.patient_id);
    if (it != split.end() && it->second == s) out.push_back(&p);
  }
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(split.begin(), split.end(), [s](const auto& kv) { return kv.second == s; }));
}

std::size_t DatasetManifest::scan_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.scans.size();
  return n;
}

void DatasetManifest::validate() const {
  std::set<std::string> patient_ids;
  std::set<std::string> scan_ids;
  for (const auto& p : patients) {
    if (p.patient_id.empty()) throw InvalidArgument("empty patient_id");
    if (!patient_ids.insert(p.patient_id).second) {
      throw InvalidArgument("duplicate patient_id '" + p.patient_id + "'");
    }
    if (p.scans.empty()) throw InvalidArgument("patient '" + p.patient_id + "' has no scans");
    for (const auto& s : p.scans) {
      if (s.scan_id.empty()) throw InvalidArgument("empty scan_id for patient '" + p.patient_id + "'");
      if (s.patient_id != p.patient_id) {
        throw InvalidArgument("scan '" + s.scan_id + "' filed under the wrong patient");
      }
      if (!scan_ids.insert(s.scan_id).second) {
        throw InvalidArgument("duplicate scan_id '" + s.scan_id + "'");
      }
    }
    const auto& l = p.labels;
    if (l.stroke_scale && (*l.stroke_scale < 0 || *l.stroke_scale > kStrokeScaleMax)) {
      throw InvalidArgument("stroke_scale out of [0, 42] for patient '" + p.patient_id + "'");
    }
    if (l.age && !(*l.age > 0.0 && std::isfinite(*l.age))) {
      throw InvalidArgument("age must be > 0 for patient '" + p.patient_id + "'");
    }
    if (l.sex && *l.sex != 0 && *l.sex != 1) {
      throw InvalidArgument("sex must be 0 or 1 for patient '" + p.patient_id + "'");
    }
  }
  for (const auto& [id, s] : split) {
    if (!patient_ids.count(id)) {
      throw InvalidArgument("split assigned to unknown patient '" + id + "'");
    }
  }
}

namespace {

const std::set<std::string>& known_fields() {
  static const std::set<std::string> k{"patient_id", "scan_id", "uri", "dataset_tag", "diagnosis",
                                       "age", "sex", "stroke_scale", "split"};
  return k;
}

template <typename T>
void merge_label(std::optional<T>& slot, const json& rec, const char* key,
                 const std::string& patient, std::size_t line) {
  if (!rec.contains(key) || rec[key].is_null()) return;
  T v = rec[key].get<T>();
  if (slot && *slot != v) {
    throw FormatError("line " + std::to_string(line) + ": conflicting '" + key +
                      "' for patient '" + patient + "'");
  }
  slot = v;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

  DatasetManifest m;
  std::unordered_map<std::string, std::size_t> index;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object()) throw FormatError("manifest line " + std::to_string(line_no) + " is not an object");
    for (const auto& [k, v] : rec.items()) {
      if (!known_fields().count(k)) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": unknown field '" + k + "'");
      }
    }
    try {
      ScanRecord scan;
      scan.patient_id = rec.at("patient_id").get<std::string>();
      scan.scan_id = rec.at("scan_id").get<std::string>();
      fs::path uri = rec.at("uri").get<std::string>();
      scan.uri = uri.is_absolute() ? uri : (base / uri).lexically_normal();
      scan.dataset_tag = rec.value("dataset_tag", std::string{});

      auto [it, inserted] = index.try_emplace(scan.patient_id, m.patients.size());
      if (inserted) {
        m.patients.push_back(PatientRecord{scan.patient_id, {}, {}});
      }
      PatientRecord& p = m.patients[it->second];
      merge_label(p.labels.diagnosis, rec, "diagnosis", p.patient_id, line_no);
      merge_label(p.labels.age, rec, "age", p.patient_id, line_no);
      merge_label(p.labels.sex, rec, "sex", p.patient_id, line_no);
      merge_label(p.labels.stroke_scale, rec, "stroke_scale", p.patient_id, line_no);
      if (rec.contains("split") && !rec["split"].is_null()) {
        const Split s = parse_split(rec["split"].get<std::string>());
        auto [sit, fresh] = m.split.try_emplace(p.patient_id, s);
        if (!fresh && sit->second != s) {
          throw FormatError("line " + std::to_string(line_no) + ": patient '" + p.patient_id +
                            "' assigned to two splits");
        }
      }
      p.scans.push_back(std::move(scan));
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  const fs::path base = fs::absolute(path.has_parent_path() ? path.parent_path() : fs::path("."));
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& p : m.patients) {
      for (const auto& s : p.scans) {
        json rec;
        rec["patient_id"] = p.patient_id;
        rec["scan_id"] = s.scan_id;
        const fs::path abs = fs::absolute(s.uri).lexically_normal();
        const fs::path rel = abs.lexically_relative(base);
        const bool below = !rel.empty() && *rel.begin() != "..";
        rec["uri"] = (below ? rel : abs).generic_string();
        rec["dataset_tag"] = s.dataset_tag;
        if (p.labels.diagnosis) rec["diagnosis"] = *p.labels.diagnosis;
        if (p.labels.age) rec["age"] = *p.labels.age;
        if (p.labels.sex) rec["sex"] = *p.labels.sex;
        if (p.labels.stroke_scale) rec["stroke_scale"] = *p.labels.stroke_scale;
        if (auto sp = m.split_of(p.patient_id)) rec["split"] = std::string(to_string(*sp));
        out << rec.dump() << "\n";
      }
    }
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

std::optional<int> BinaryLabel::of(const PatientRecord& p) const {
  if (field == "sex") return p.labels.sex;
  if (field == "diagnosis") {
    if (!p.labels.diagnosis) return std::nullopt;
    if (*p.labels.diagnosis == positive) return 1;
    if (*p.labels.diagnosis == negative) return 0;
    return std::nullopt;
  }
  throw InvalidArgument("'" + field + "' is not a binary label field");
}

namespace {

// Largest-remainder apportionment of n items over the given shares.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& shares) {
  std::vector<std::size_t> counts(shares.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += counts[i];
    rem.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n && k < rem.size(); ++k, ++used) ++counts[rem[k].second];
  return counts;
}

std::vector<std::string> assignable_ids(const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& p : m.patients) {
    if (m.split_of(p.patient_id) != Split::kPretrainOnly) ids.push_back(p.patient_id);
  }
  return ids;
}

}  // namespace

DatasetManifest make_splits(const DatasetManifest& m, const SplitRatios& r, std::uint64_t seed) {
  const std::vector<double> shares{r.train, r.val, r.test};
  for (double s : shares) {
    if (!(s >= 0.0) || s > 1.0) throw InvalidArgument("split ratios must lie in [0, 1]");
  }
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must sum to 1");
  }
  std::vector<std::string> ids = assignable_ids(m);
  const auto classes = std::count_if(shares.begin(), shares.end(), [](double s) { return s > 0.0; });
  if (static_cast<std::int64_t>(ids.size()) < classes) {
    throw DegenerateInput("fewer patients (" + std::to_string(ids.size()) + ") than split classes (" +
                          std::to_string(classes) + ")");
  }
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng(seed).substream("make_splits");
  shuffle(ids.begin(), ids.end(), rng);

  const auto counts = apportion(ids.size(), shares);
  DatasetManifest out = m;
  const Split order[3] = {Split::kTrain, Split::kVal, Split::kTest};
  std::size_t k = 0;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) out.split[ids[k++]] = order[c];
  }
  return out;
}

DatasetManifest balance_binary_train(const DatasetManifest& m, const BinaryLabel& label,
                                     std::uint64_t seed, const BalanceHoldout& holdout) {
  std::array<std::vector<std::string>, 2> by_class;
  for (const auto& id : assignable_ids(m)) {
    const auto y = label.of(*m.find(id));
    if (!y) throw InvalidArgument("patient '" + id + "' has no '" + label.field + "' label");
    by_class[*y].push_back(id);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw DegenerateInput("binary label '" + label.field + "' has an absent class");
  }
  Rng rng = Rng(seed).substream("balance_binary_train");
  for (auto& ids : by_class) {
    std::sort(ids.begin(), ids.end());
    shuffle(ids.begin(), ids.end(), rng);
  }
  const int minority = by_class[1].size() < by_class[0].size() ? 1 : 0;
  const int majority = 1 - minority;
  const auto& mino = by_class[minority];
  const auto& majo = by_class[majority];
  const std::size_t held = holdout.val_minority + holdout.test_minority;
  if (held >= mino.size()) {
    throw InvalidArgument("holdout of " + std::to_string(held) + " leaves no minority patients for training");
  }
  const std::size_t per_class = mino.size() - held;

  DatasetManifest out = m;
  std::size_t k = 0;
  for (; k < per_class; ++k) out.split[mino[k]] = Split::kTrain;
  for (std::size_t i = 0; i < holdout.val_minority; ++i) out.split[mino[k++]] = Split::kVal;
  for (std::size_t i = 0; i < holdout.test_minority; ++i) out.split[mino[k++]] = Split::kTest;

  for (std::size_t i = 0; i < per_class; ++i) out.split[majo[i]] = Split::kTrain;
  const std::size_t rest = majo.size() - per_class;
  const std::size_t to_val = rest / 2;
  for (std::size_t i = 0; i < rest; ++i) {
    out.split[majo[per_class + i]] = i < to_val ? Split::kVal : Split::kTest;
  }
  return out;
}

}  // namespace brainssl
