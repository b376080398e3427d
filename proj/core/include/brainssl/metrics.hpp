#pragma once

#include <optional>
#include <span>

namespace brainssl {

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Throws DegenerateInput when a class is absent.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Throws InvalidArgument on a length mismatch or empty input.
double mean_abs_err(std::span<const double> pred, std::span<const double> target);

struct MeanStd {
  double mean = 0.0;
  std::optional<double> std;  // sample standard deviation; absent for one value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace brainssl
