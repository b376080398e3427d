#include "brainssl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "brainssl/error.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

EpochSchedule epoch_schedule(const DatasetManifest& m, std::uint64_t epoch_seed) {
  const auto train = m.in_split(Split::kTrain);
  if (train.empty()) throw DegenerateInput("training split is empty");
  const Rng root(epoch_seed);
  const Rng pick = root.substream("scan");
  EpochSchedule s;
  s.epoch_seed = epoch_seed;
  s.entries.reserve(train.size());
  for (const auto* p : train) {
    if (p->scans.empty()) throw InvalidArgument("patient '" + p->patient_id + "' has no scans");
    Rng r = pick.substream(p->patient_id);
    const auto k = r.uniform_int(0, static_cast<std::int64_t>(p->scans.size()) - 1);
    s.entries.push_back({p->patient_id, p->scans[static_cast<std::size_t>(k)].scan_id});
  }
  Rng order = root.substream("order");
  shuffle(s.entries.begin(), s.entries.end(), order);
  return s;
}

void append_schedule(const EpochSchedule& s, std::int64_t epoch, std::ostream& out) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["position"] = i;
    j["patient_id"] = s.entries[i].patient_id;
    j["scan_id"] = s.entries[i].scan_id;
    out << j.dump() << '\n';
  }
}

namespace {

struct Keyed {
  double key;
  std::uint64_t tie;
  std::string id;
};

}  // namespace

FractionSubset fraction_subset(const DatasetManifest& m, double fraction, std::uint64_t seed,
                               const std::optional<BinaryLabel>& label) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto train = m.in_split(Split::kTrain);
  if (train.empty()) throw DegenerateInput("training split is empty");

  std::map<int, std::vector<std::string>> groups;
  for (const auto* p : train) {
    int cls = 0;
    if (label) {
      const auto y = label->of(*p);
      if (!y) throw InvalidArgument("patient '" + p->patient_id + "' has no '" + label->field + "' label");
      cls = *y;
    }
    groups[cls].push_back(p->patient_id);
  }

  // Each class is laid out evenly on (0, 1): rank r of n sits at (r + 0.5) / n.
  // Sorting all patients by that position interleaves the classes, so every
  // prefix is stratified and a larger fraction extends a smaller one.
  const Rng root = Rng(seed).substream("fraction_subset");
  std::vector<Keyed> order;
  for (auto& [cls, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    Rng r = root.substream(static_cast<std::uint64_t>(cls));
    shuffle(ids.begin(), ids.end(), r);
    const double n = static_cast<double>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      order.push_back({(static_cast<double>(i) + 0.5) / n, r(), ids[i]});
    }
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.tie < b.tie;
  });

  const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
  std::set<std::string> chosen;
  for (std::size_t i = 0; i < take; ++i) chosen.insert(order[i].id);
  if (label) {
    for (const auto& [cls, ids] : groups) {
      const bool any = std::any_of(ids.begin(), ids.end(), [&](const auto& id) { return chosen.count(id) > 0; });
      if (!any) {
        throw DegenerateInput("fraction " + std::to_string(fraction) + " leaves class " + std::to_string(cls) +
                              " without patients");
      }
    }
  }

  FractionSubset s;
  s.fraction = fraction;
  s.parent_seed = seed;
  for (const auto* p : train) {
    if (chosen.count(p->patient_id)) s.patient_ids.push_back(p->patient_id);
  }
  return s;
}

DatasetManifest restrict_train(const DatasetManifest& m, const FractionSubset& subset) {
  const std::set<std::string> keep(subset.patient_ids.begin(), subset.patient_ids.end());
  DatasetManifest out = m;
  for (auto it = out.split.begin(); it != out.split.end();) {
    if (it->second == Split::kTrain && !keep.count(it->first)) {
      it = out.split.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

}  // namespace brainssl
