#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "brainssl/manifest.hpp"
#include "brainssl/rng.hpp"
#include "brainssl/volume.hpp"

namespace testutil {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("brainssl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline brainssl::VolumeGrid random_volume(const brainssl::Shape3& shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> data(static_cast<std::size_t>(brainssl::numel(shape)));
  for (auto& x : data) x = dist(gen);
  return brainssl::VolumeGrid(shape, std::move(data));
}

inline brainssl::VolumeGrid ramp_volume(const brainssl::Shape3& shape) {
  brainssl::VolumeGrid v(shape);
  for (std::int64_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(i + 1);
  return v;
}

// Patients p0..p{n-1}, each with `scans` scans named p<i>-s<j>.
inline brainssl::DatasetManifest make_manifest(int n, int scans = 1) {
  brainssl::DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    brainssl::PatientRecord p;
    p.patient_id = "p" + std::to_string(i);
    for (int j = 0; j < scans; ++j) {
      brainssl::ScanRecord s;
      s.patient_id = p.patient_id;
      s.scan_id = p.patient_id + "-s" + std::to_string(j);
      s.uri = s.scan_id + ".f32";
      s.dataset_tag = "test";
      p.scans.push_back(s);
    }
    m.patients.push_back(std::move(p));
  }
  return m;
}

}  // namespace testutil
