#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainssl/manifest.hpp"

namespace brainssl {

struct ScheduleEntry {
  std::string patient_id;
  std::string scan_id;
  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

/// One epoch over the training split: every patient exactly once, each with
/// one of their scans drawn uniformly.
struct EpochSchedule {
  std::vector<ScheduleEntry> entries;
  std::uint64_t epoch_seed = 0;
};

/// Throws DegenerateInput when the training split is empty.
EpochSchedule epoch_schedule(const DatasetManifest& m, std::uint64_t epoch_seed);

/// Appends one JSON object per entry: {"epoch", "position", "patient_id", "scan_id"}.
void append_schedule(const EpochSchedule& s, std::int64_t epoch, std::ostream& out);

inline const std::vector<double>& fraction_ladder() {
  static const std::vector<double> ladder{0.2, 0.4, 0.6, 0.8, 1.0};
  return ladder;
}

struct FractionSubset {
  double fraction = 1.0;
  std::vector<std::string> patient_ids;  // training patients, manifest order
  std::uint64_t parent_seed = 0;
};

/// Patient-level subset of the training split holding round(fraction * n)
/// patients. All fractions drawn with one seed are nested. With `label` the
/// ordering interleaves classes so every prefix keeps the class proportions
/// within one patient; without it the ordering is a plain permutation.
/// Throws InvalidArgument for a fraction outside (0, 1] or a missing label,
/// and DegenerateInput when a class would end up with no patient.
FractionSubset fraction_subset(const DatasetManifest& m, double fraction, std::uint64_t seed,
                               const std::optional<BinaryLabel>& label = std::nullopt);

/// Copy of `m` in which training patients outside the subset are unassigned;
/// val and test are unchanged.
DatasetManifest restrict_train(const DatasetManifest& m, const FractionSubset& subset);

}  // namespace brainssl
