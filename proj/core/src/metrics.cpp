#include "brainssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "brainssl/error.hpp"

namespace brainssl {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i : idx) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw NumericError("score is NaN");
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Counted in half-pairs so the total is an exact integer.
  std::uint64_t half_pairs = 0, neg_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? p : n) += 1;
      ++j;
    }
    half_pairs += p * (2 * neg_below + n);
    neg_below += n;
    pos += p;
    neg += n;
    i = j;
  }
  if (pos == 0 || neg == 0) throw DegenerateInput("auc needs both classes");
  return (static_cast<double>(half_pairs) / 2.0) / (static_cast<double>(pos) * static_cast<double>(neg));
}

double mean_abs_err(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw InvalidArgument("prediction and target differ in length");
  if (pred.empty()) throw InvalidArgument("mean_abs_err needs at least one value");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("no values to aggregate");
  MeanStd r;
  const double n = static_cast<double>(values.size());
  double shifted = 0.0;
  for (double v : values) shifted += v - values[0];
  r.mean = values[0] + shifted / n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

}  // namespace brainssl
