#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace brainssl {

enum class Split { kTrain, kVal, kTest, kPretrainOnly };

std::string_view to_string(Split s);
/// Accepts "train", "val", "test" and "pretrain-only".
Split parse_split(std::string_view s);

struct ScanRecord {
  std::string scan_id;
  std::string patient_id;
  std::filesystem::path uri;
  std::string dataset_tag;

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

inline constexpr int kStrokeScaleMax = 42;

struct Labels {
  std::optional<std::string> diagnosis;
  std::optional<double> age;  // years, > 0
  std::optional<int> sex;     // 0 or 1
  std::optional<int> stroke_scale;  // NIH stroke scale, 0..42

  friend bool operator==(const Labels&, const Labels&) = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<ScanRecord> scans;
  Labels labels;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Patient-to-scans mapping plus a patient-level split assignment. Patients
/// without an entry in `split` are unassigned.
struct DatasetManifest {
  std::vector<PatientRecord> patients;
  std::map<std::string, Split> split;

  const PatientRecord* find(std::string_view patient_id) const;
  std::optional<Split> split_of(std::string_view patient_id) const;
  /// Patients assigned to `s`, in manifest order.
  std::vector<const PatientRecord*> in_split(Split s) const;
  std::size_t count(Split s) const;
  std::size_t scan_count() const;

  /// Checks every record and split invariant; throws InvalidArgument.
  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Line-delimited JSON, one record per scan. Relative URIs are resolved
/// against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes URIs relative to the manifest's directory when they live below it.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// Selects a binary target from patient labels. For "sex" the stored 0/1 is
/// used; for "diagnosis" `positive` maps to 1 and `negative` to 0 and any
/// other value counts as missing.
struct BinaryLabel {
  std::string field = "sex";
  std::string positive;
  std::string negative;

  std::optional<int> of(const PatientRecord& p) const;
};

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Patient-level random partition. Counts come from largest-remainder
/// rounding so each split is within one patient of its exact share.
/// Patients marked pretrain-only keep that assignment.
DatasetManifest make_splits(const DatasetManifest& m, const SplitRatios& ratios, std::uint64_t seed);

/// Minority-class patients reserved for validation and test before the
/// training split is balanced.
struct BalanceHoldout {
  std::size_t val_minority = 0;
  std::size_t test_minority = 0;
};

/// Builds a class-balanced training split and imbalanced val/test splits:
/// the minority class gives `holdout` patients to val/test and the rest to
/// train; train takes the same number of majority patients; the remaining
/// majority patients are divided between val and test (test gets the odd
/// one). Pretrain-only patients are untouched.
DatasetManifest balance_binary_train(const DatasetManifest& m, const BinaryLabel& label,
                                     std::uint64_t seed, const BalanceHoldout& holdout = {});

}  // namespace brainssl
